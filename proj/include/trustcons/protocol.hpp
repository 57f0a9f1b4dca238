#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/rng.hpp"
#include "trustcons/topology.hpp"
#include "trustcons/trust.hpp"

namespace trustcons {

/// Confidence schedule lambda_t = c * exp(-gamma * t).
struct LambdaSchedule {
    double c = 0.9;
    double gamma = 0.05;

    LambdaSchedule() = default;
    LambdaSchedule(double c_, double gamma_) : c(c_), gamma(gamma_) { validate(); }

    void validate() const {
        if (!(c > 0.0 && c < 1.0)) {
            throw ConfigError("schedule c must lie in (0, 1), got " + format_double(c));
        }
        if (!(gamma > 0.0)) {
            throw ConfigError("schedule gamma must be positive, got " + format_double(gamma));
        }
    }
};

inline double lambda_at(const LambdaSchedule& schedule, std::size_t t) {
    // t == 0 is special-cased so that gamma = inf still yields c.
    if (t == 0) {
        return schedule.c;
    }
    return schedule.c * std::exp(-schedule.gamma * static_cast<double>(t));
}

/// Row-stochastic weights of one round, split by sender label:
/// `legit` is L x L (W^L), `malicious` is L x M (W^M).
struct WeightMatrix {
    Eigen::MatrixXd legit;
    Eigen::MatrixXd malicious;
    std::size_t round = 0;

    std::size_t rows() const noexcept { return static_cast<std::size_t>(legit.rows()); }

    double max_row_sum_error() const {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < legit.rows(); ++i) {
            const double s = legit.row(i).sum() + (malicious.cols() ? malicious.row(i).sum() : 0.0);
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }

    /// Exact equality with nominal weights: same W^L bits and W^M identically zero.
    bool equals_nominal(const WeightMatrix& nominal) const {
        return legit == nominal.legit && (malicious.size() == 0 || malicious.isZero(0.0));
    }
};

namespace detail {

/// Off-diagonal and diagonal weight for a row with `k` trusted neighbors.
/// Shared by the nominal and online rules so equal neighborhoods give equal bits.
inline std::pair<double, double> row_weights(std::size_t k) {
    const double off = 1.0 / static_cast<double>(k + 1);
    return {off, 1.0 - static_cast<double>(k) * off};
}

} // namespace detail

/// Nominal weights over legitimate neighbors only; malicious block all zero.
inline WeightMatrix nominal_weights(const NetworkTopology& topo) {
    const auto L = static_cast<Eigen::Index>(topo.legit_count());
    const auto M = static_cast<Eigen::Index>(topo.malicious_count());
    WeightMatrix w{Eigen::MatrixXd::Zero(L, L), Eigen::MatrixXd::Zero(L, M), 0};
    for (AgentId i = 0; i < topo.legit_count(); ++i) {
        const auto [off, diag] = detail::row_weights(topo.legit_neighbor_count(i));
        for (AgentId j : topo.neighbors(i)) {
            if (topo.is_legitimate(j)) {
                w.legit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = off;
            }
        }
        w.legit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = diag;
    }
    return w;
}

/// Online weights from the current ledger. Rewrites `out` in place.
inline void fill_online_weights(const TrustLedger& ledger, const NetworkTopology& topo,
                                WeightMatrix& out) {
    const auto L = static_cast<Eigen::Index>(topo.legit_count());
    const auto M = static_cast<Eigen::Index>(topo.malicious_count());
    if (ledger.observer_count() != topo.legit_count()) {
        throw ProtocolViolation("ledger covers " + std::to_string(ledger.observer_count()) +
                                " observers but topology has " + std::to_string(L) +
                                " legitimate agents");
    }
    out.legit.setZero(L, L);
    out.malicious.setZero(L, M);
    out.round = ledger.rounds() == 0 ? 0 : ledger.rounds() - 1;
    const auto betas = ledger.betas();
    const auto& edges = ledger.edges();
    for (AgentId i = 0; i < topo.legit_count(); ++i) {
        const auto [first, last] = ledger.observer_range(i);
        std::size_t trusted = 0;
        for (std::size_t k = first; k < last; ++k) {
            trusted += betas[k] >= 0.0 ? 1 : 0;
        }
        const auto [off, diag] = detail::row_weights(trusted);
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t k = first; k < last; ++k) {
            if (betas[k] < 0.0) {
                continue;
            }
            const AgentId j = edges[k].sender;
            if (topo.is_legitimate(j)) {
                out.legit(row, static_cast<Eigen::Index>(j)) = off;
            } else {
                out.malicious(row, static_cast<Eigen::Index>(j - topo.legit_count())) = off;
            }
        }
        out.legit(row, row) = diag;
    }
}

inline WeightMatrix online_weights(const TrustLedger& ledger, const NetworkTopology& topo) {
    WeightMatrix w;
    fill_online_weights(ledger, topo, w);
    return w;
}

/// Edges currently misclassified: legitimate sender with beta < 0, or
/// malicious sender with beta >= 0. Zero iff the online weights are nominal.
inline std::size_t misclassified_edges(const TrustLedger& ledger, const NetworkTopology& topo) {
    std::size_t count = 0;
    const auto betas = ledger.betas();
    const auto& edges = ledger.edges();
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const bool trusted = betas[k] >= 0.0;
        count += trusted != topo.is_legitimate(edges[k].sender) ? 1 : 0;
    }
    return count;
}

struct PerronOptions {
    std::size_t max_iterations = 1'000'000;
    double tolerance = 1e-12;
};

/// Left Perron vector of a primitive row-stochastic matrix: v >= 0, sum v = 1,
/// v^T W = v^T. Power iteration on W^T from the uniform vector.
inline Eigen::VectorXd perron_vector(const Eigen::MatrixXd& w, const PerronOptions& opts = {}) {
    const Eigen::Index n = w.rows();
    if (n == 0 || w.cols() != n) {
        throw ConfigError("Perron vector needs a non-empty square matrix");
    }
    const Eigen::MatrixXd wt = w.transpose();
    Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    Eigen::VectorXd next(n);
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
        next.noalias() = wt * v;
        next /= next.sum();
        residual = (next - v).lpNorm<Eigen::Infinity>();
        v.swap(next);
        if (residual <= opts.tolerance) {
            // Confirm on the normalized iterate itself.
            next.noalias() = wt * v;
            residual = (next - v).lpNorm<Eigen::Infinity>();
            if (residual <= opts.tolerance) {
                return v;
            }
        }
    }
    throw NumericalError("Perron power iteration did not converge in " +
                         std::to_string(opts.max_iterations) + " iterations; residual " +
                         format_double(residual));
}

inline double nominal_consensus_value(const Eigen::VectorXd& v, const Eigen::VectorXd& x0_legit) {
    if (v.size() != x0_legit.size()) {
        throw ConfigError("Perron vector and initial state differ in length");
    }
    return v.dot(x0_legit);
}

/// Quantities of the malicious-free reference protocol, computed once per topology.
struct NominalModel {
    WeightMatrix weights;
    Eigen::VectorXd perron;

    double min_perron() const { return perron.minCoeff(); }
};

inline NominalModel make_nominal(const NetworkTopology& topo, const PerronOptions& opts = {}) {
    NominalModel m;
    m.weights = nominal_weights(topo);
    m.perron = perron_vector(m.weights.legit, opts);
    return m;
}

/// Legitimate state with its exact split x = a + b into the legitimate-input
/// contribution `a` and the malicious-input contribution `b`.
struct SimulationState {
    Eigen::VectorXd x_legit;
    Eigen::VectorXd contrib_legit;
    Eigen::VectorXd contrib_malicious;
    Eigen::VectorXd x_malicious;
    std::size_t round = 0;

    static SimulationState initial(const Eigen::VectorXd& x0_legit, std::size_t malicious) {
        SimulationState s;
        s.x_legit = x0_legit;
        s.contrib_legit = x0_legit;
        s.contrib_malicious = Eigen::VectorXd::Zero(x0_legit.size());
        s.x_malicious = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(malicious));
        return s;
    }

    double decomposition_error() const {
        if (x_legit.size() == 0) {
            return 0.0;
        }
        return (x_legit - contrib_legit - contrib_malicious).lpNorm<Eigen::Infinity>();
    }
};

/// One synchronous round of the resilient update, advancing the direct state
/// and both contributions side by side. `state.x_malicious` is the malicious
/// transmission of the current round.
inline SimulationState decompose_step(const SimulationState& state, const WeightMatrix& w,
                                      double lambda, const Eigen::VectorXd& x0_legit) {
    const Eigen::Index L = state.x_legit.size();
    if (w.legit.rows() != L || w.legit.cols() != L || x0_legit.size() != L ||
        state.contrib_legit.size() != L || state.contrib_malicious.size() != L ||
        w.malicious.rows() != L || w.malicious.cols() != state.x_malicious.size()) {
        throw ConfigError("decompose_step: dimension mismatch");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw DomainError("lambda must lie in [0, 1], got " + format_double(lambda));
    }
    const double keep = 1.0 - lambda;
    SimulationState next;
    next.round = state.round + 1;
    const Eigen::VectorXd from_malicious = w.malicious * state.x_malicious;
    next.x_legit = lambda * x0_legit + keep * (w.legit * state.x_legit + from_malicious);
    next.contrib_legit = lambda * x0_legit + keep * (w.legit * state.contrib_legit);
    next.contrib_malicious = keep * (w.legit * state.contrib_malicious + from_malicious);
    next.x_malicious = state.x_malicious;
    return next;
}

/// Oscillating attack around twice the nominal consensus value:
/// x_j(t) = 2 x* + A sin(2 pi t / P + phi_j) + N(0, sigma^2), clamped to [-eta, eta].
struct MaliciousParams {
    double amplitude_factor = 0.1;  ///< A = amplitude_factor * x*
    double period = 50.0;           ///< rounds
    double noise_stddev = 0.05;
    double eta = 1.0;               ///< state bound
    double mean_factor = 2.0;       ///< mean = mean_factor * x*

    void validate() const {
        if (!(period > 0.0)) {
            throw ConfigError("malicious.period must be positive");
        }
        if (!(noise_stddev >= 0.0)) {
            throw ConfigError("malicious.noise must be non-negative");
        }
        if (!(eta > 0.0)) {
            throw ConfigError("eta must be positive");
        }
    }
};

class OscillatingAdversary {
public:
    OscillatingAdversary(double x_nominal, std::size_t count, const MaliciousParams& params,
                         std::uint64_t seed)
        : x_nominal_(x_nominal), params_(params), rng_(seed), phases_(count) {
        params_.validate();
        for (double& phi : phases_) {
            phi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
        }
    }

    std::size_t size() const noexcept { return phases_.size(); }
    std::span<const double> phases() const noexcept { return phases_; }

    /// Transmitted malicious states of round t. Consumes one Gaussian per agent.
    Eigen::VectorXd states(std::size_t t) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(phases_.size()));
        const double amplitude = params_.amplitude_factor * x_nominal_;
        const double mean = params_.mean_factor * x_nominal_;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / params_.period;
        for (std::size_t j = 0; j < phases_.size(); ++j) {
            const double raw = mean + amplitude * std::sin(angle + phases_[j]) +
                               rng_.gaussian(0.0, params_.noise_stddev);
            out(static_cast<Eigen::Index>(j)) = std::clamp(raw, -params_.eta, params_.eta);
        }
        return out;
    }

private:
    double x_nominal_;
    MaliciousParams params_;
    Rng rng_;
    std::vector<double> phases_;
};

/// Per-round record of one protocol execution.
///
/// Snapshots k = 0..horizon hold x(k), a(k), b(k); step records s = 0..horizon-1
/// describe the weights W_s used to go from snapshot s to s+1.
struct RunTrace {
    std::uint64_t seed = 0;
    std::size_t horizon = 0;
    std::size_t legit_count = 0;
    double x_nominal = 0.0;

    // Flattened row-major [snapshot][agent].
    std::vector<double> x_legit;
    std::vector<double> contrib_legit;
    std::vector<double> contrib_malicious;

    std::vector<double> lambda;
    std::vector<std::uint64_t> ledger_hash;
    std::vector<std::uint32_t> misclassified;
    std::vector<std::uint8_t> weights_nominal;
    std::vector<double> max_row_sum_error;

    double max_decomposition_error = 0.0;
    std::size_t snapshots() const noexcept { return horizon + 1; }

    std::span<const double> state_at(std::size_t k) const {
        return std::span<const double>(x_legit).subspan(k * legit_count, legit_count);
    }
    std::span<const double> contrib_legit_at(std::size_t k) const {
        return std::span<const double>(contrib_legit).subspan(k * legit_count, legit_count);
    }
    std::span<const double> contrib_malicious_at(std::size_t k) const {
        return std::span<const double>(contrib_malicious).subspan(k * legit_count, legit_count);
    }
};

namespace detail {

inline void append_snapshot(RunTrace& trace, const SimulationState& s) {
    trace.x_legit.insert(trace.x_legit.end(), s.x_legit.data(), s.x_legit.data() + s.x_legit.size());
    trace.contrib_legit.insert(trace.contrib_legit.end(), s.contrib_legit.data(),
                               s.contrib_legit.data() + s.contrib_legit.size());
    trace.contrib_malicious.insert(trace.contrib_malicious.end(), s.contrib_malicious.data(),
                                   s.contrib_malicious.data() + s.contrib_malicious.size());
    trace.max_decomposition_error =
        std::max(trace.max_decomposition_error, s.decomposition_error());
}

} // namespace detail

/// Runs the protocol for `horizon` rounds. Within round t: the adversary
/// transmits x^M(t), trust observations of round t are folded into the ledger,
/// weights W_t are derived from the updated ledger, and the state advances.
///
/// TrustSource must provide observe(ledger, topo, round, span<double>).
/// StepObserver is called as on_step(t, ledger, weights, state_before) once per round.
struct NoStepObserver {
    void operator()(std::size_t, const TrustLedger&, const WeightMatrix&,
                    const SimulationState&) const noexcept {}
};

template <typename TrustSource, typename StepObserver = NoStepObserver>
RunTrace run_protocol(const NetworkTopology& topo, const NominalModel& nominal,
                      TrustSource& trust, const LambdaSchedule& schedule,
                      const Eigen::VectorXd& x0_legit, std::size_t horizon,
                      OscillatingAdversary& adversary, StepObserver&& on_step = {}) {
    schedule.validate();
    if (static_cast<std::size_t>(x0_legit.size()) != topo.legit_count()) {
        throw ConfigError("initial state has " + std::to_string(x0_legit.size()) +
                          " entries for " + std::to_string(topo.legit_count()) +
                          " legitimate agents");
    }
    if (adversary.size() != topo.malicious_count()) {
        throw ConfigError("adversary size does not match malicious agent count");
    }

    RunTrace trace;
    trace.horizon = horizon;
    trace.legit_count = topo.legit_count();
    trace.x_nominal = nominal_consensus_value(nominal.perron, x0_legit);
    const std::size_t L = topo.legit_count();
    trace.x_legit.reserve((horizon + 1) * L);
    trace.contrib_legit.reserve((horizon + 1) * L);
    trace.contrib_malicious.reserve((horizon + 1) * L);

    TrustLedger ledger(topo);
    std::vector<double> observations(ledger.size());
    WeightMatrix w;
    SimulationState state = SimulationState::initial(x0_legit, topo.malicious_count());
    detail::append_snapshot(trace, state);

    for (std::size_t t = 0; t < horizon; ++t) {
        state.x_malicious = adversary.states(t);
        trust.observe(ledger, topo, t, observations);
        ledger.update(std::span<const double>(observations));
        fill_online_weights(ledger, topo, w);
        const double lambda = lambda_at(schedule, t);

        const std::size_t wrong = misclassified_edges(ledger, topo);
        trace.lambda.push_back(lambda);
        trace.ledger_hash.push_back(ledger.hash());
        trace.misclassified.push_back(static_cast<std::uint32_t>(wrong));
        trace.weights_nominal.push_back(wrong == 0 ? 1 : 0);
        trace.max_row_sum_error.push_back(w.max_row_sum_error());
        on_step(t, ledger, w, state);

        state = decompose_step(state, w, lambda, x0_legit);
        detail::append_snapshot(trace, state);
    }
    return trace;
}

/// Everything needed to execute one stochastic run from a single seed.
struct RunSpec {
    TrustModel trust;
    LambdaSchedule schedule;
    MaliciousParams malicious;
    std::size_t horizon = 1000;
    std::uint64_t seed = 0;
    /// When set, the initial state and adversary streams come from this seed
    /// instead of `seed`, so runs that share it see the same environment.
    std::optional<std::uint64_t> environment_seed;

    std::uint64_t env_seed() const noexcept { return environment_seed.value_or(seed); }
};

/// Initial legitimate states drawn uniform on [0, eta) from the run's
/// initial-state stream.
inline Eigen::VectorXd draw_initial_state(std::size_t legit_count, double eta, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::initial_state)}));
    Eigen::VectorXd x0(static_cast<Eigen::Index>(legit_count));
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        x0(i) = rng.uniform(0.0, eta);
    }
    return x0;
}

/// Stochastic run: initial state, trust observations and adversary noise each
/// come from their own stream; trust from `spec.seed`, the other two from
/// `spec.env_seed()`.
template <typename StepObserver = NoStepObserver>
RunTrace run_protocol(const NetworkTopology& topo, const NominalModel& nominal,
                      const RunSpec& spec, StepObserver&& on_step = {}) {
    const Eigen::VectorXd x0 = draw_initial_state(topo.legit_count(), spec.malicious.eta, spec.env_seed());
    StochasticTrust trust(spec.trust,
                          derive_seed(spec.seed, {static_cast<std::uint64_t>(Stream::trust)}));
    OscillatingAdversary adversary(
        nominal_consensus_value(nominal.perron, x0), topo.malicious_count(), spec.malicious,
        derive_seed(spec.env_seed(), {static_cast<std::uint64_t>(Stream::adversary)}));
    RunTrace trace = run_protocol(topo, nominal, trust, spec.schedule, x0, spec.horizon, adversary,
                                  std::forward<StepObserver>(on_step));
    trace.seed = spec.seed;
    return trace;
}

} // namespace trustcons
