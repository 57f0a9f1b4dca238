#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/rng.hpp"
#include "trustcons/topology.hpp"

namespace trustcons {

/// Distribution of trust observations attached to transmissions.
///
/// Observations of a sender of a given kind are uniform on [mu - w, mu + w],
/// with mu the kind's mean and w = min(1 - mu_legit, mu_malicious), so both
/// kinds share the same spread and stay inside [0, 1].
struct TrustModel {
    double mean_legit = 0.7;
    double mean_malicious = 0.3;

    TrustModel() = default;
    TrustModel(double mu_legit, double mu_malicious)
        : mean_legit(mu_legit), mean_malicious(mu_malicious) {
        validate();
    }

    /// E_L = E[alpha] - 1/2 for legitimate senders.
    double offset_legit() const noexcept { return mean_legit - 0.5; }
    /// E_M = E[alpha] - 1/2 for malicious senders.
    double offset_malicious() const noexcept { return mean_malicious - 0.5; }

    double support_half_width() const noexcept {
        return std::min(1.0 - mean_legit, mean_malicious);
    }

    void validate() const {
        if (!(mean_legit > 0.5 && mean_legit <= 1.0)) {
            throw ConfigError("legitimate trust mean must lie in (0.5, 1], got " +
                              format_double(mean_legit));
        }
        if (!(mean_malicious >= 0.0 && mean_malicious < 0.5)) {
            throw ConfigError("malicious trust mean must lie in [0, 0.5), got " +
                              format_double(mean_malicious));
        }
    }
};

inline double sample_trust(const TrustModel& model, AgentKind sender, Rng& rng) {
    const double mu = sender == AgentKind::legitimate ? model.mean_legit : model.mean_malicious;
    const double w = model.support_half_width();
    return std::clamp(rng.uniform(mu - w, mu + w), 0.0, 1.0);
}

/// Directed monitored edge: `observer` (legitimate) receives from `sender`.
struct DirectedEdge {
    AgentId observer = 0;
    AgentId sender = 0;
    auto operator<=>(const DirectedEdge&) const = default;
};

/// Running aggregates beta_ij(t) = sum_{s<=t} (alpha_ij(s) - 1/2) for every
/// legitimate observer i and every neighbor j. Entries are grouped by observer
/// in ascending order, neighbors ascending within a group.
class TrustLedger {
public:
    TrustLedger() = default;

    explicit TrustLedger(const NetworkTopology& topo) : offsets_(topo.legit_count() + 1, 0) {
        for (AgentId i = 0; i < topo.legit_count(); ++i) {
            for (AgentId j : topo.neighbors(i)) {
                edges_.push_back({i, j});
            }
            offsets_[i + 1] = edges_.size();
        }
        beta_.assign(edges_.size(), 0.0);
    }

    std::size_t size() const noexcept { return edges_.size(); }
    /// Number of observation rounds folded in so far.
    std::size_t rounds() const noexcept { return rounds_; }
    std::size_t observer_count() const noexcept {
        return offsets_.empty() ? 0 : offsets_.size() - 1;
    }

    const std::vector<DirectedEdge>& edges() const noexcept { return edges_; }
    std::span<const double> betas() const noexcept { return beta_; }

    /// Entry range [first, last) of the edges observed by agent i.
    std::pair<std::size_t, std::size_t> observer_range(AgentId i) const {
        if (i + 1 >= offsets_.size()) {
            throw DomainError("agent " + std::to_string(i) + " is not a legitimate observer");
        }
        return {offsets_[i], offsets_[i + 1]};
    }

    double beta(AgentId observer, AgentId sender) const {
        const auto [first, last] = observer_range(observer);
        for (std::size_t k = first; k < last; ++k) {
            if (edges_[k].sender == sender) {
                return beta_[k];
            }
        }
        throw DomainError("agent " + std::to_string(sender) + " is not a neighbor of " +
                          std::to_string(observer));
    }

    void set_beta(AgentId observer, AgentId sender, double value) {
        const auto [first, last] = observer_range(observer);
        for (std::size_t k = first; k < last; ++k) {
            if (edges_[k].sender == sender) {
                beta_[k] = value;
                return;
            }
        }
        throw DomainError("agent " + std::to_string(sender) + " is not a neighbor of " +
                          std::to_string(observer));
    }

    /// Folds one round of observations, aligned with `edges()`.
    void update(std::span<const double> observations) {
        if (observations.size() != beta_.size()) {
            throw ProtocolViolation("round " + std::to_string(rounds_) + ": expected " +
                                    std::to_string(beta_.size()) + " trust observations, got " +
                                    std::to_string(observations.size()));
        }
        for (std::size_t k = 0; k < beta_.size(); ++k) {
            beta_[k] += observations[k] - 0.5;
        }
        ++rounds_;
    }

    /// Folds one round given as an edge-keyed map; every monitored edge must be present.
    void update(const std::map<DirectedEdge, double>& observations) {
        std::vector<double> aligned(edges_.size());
        for (std::size_t k = 0; k < edges_.size(); ++k) {
            const auto it = observations.find(edges_[k]);
            if (it == observations.end()) {
                throw ProtocolViolation("round " + std::to_string(rounds_) +
                                        ": missing trust observation for edge " +
                                        std::to_string(edges_[k].observer) + "<-" +
                                        std::to_string(edges_[k].sender));
            }
            aligned[k] = it->second;
        }
        if (observations.size() != edges_.size()) {
            throw ProtocolViolation("round " + std::to_string(rounds_) +
                                    ": observation for an unmonitored edge");
        }
        update(std::span<const double>(aligned));
    }

    /// FNV-1a over the bit patterns of all aggregates and the round count.
    std::uint64_t hash() const noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](std::uint64_t word) {
            for (int b = 0; b < 8; ++b) {
                h ^= (word >> (8 * b)) & 0xffU;
                h *= 0x100000001b3ULL;
            }
        };
        mix(rounds_);
        for (double b : beta_) {
            mix(std::bit_cast<std::uint64_t>(b));
        }
        return h;
    }

private:
    std::vector<DirectedEdge> edges_;
    std::vector<std::size_t> offsets_;
    std::vector<double> beta_;
    std::size_t rounds_ = 0;
};

template <typename Observations>
TrustLedger update_ledger(TrustLedger ledger, const Observations& observations) {
    ledger.update(observations);
    return ledger;
}

/// Neighbors of legitimate agent i whose aggregate is non-negative (ties trusted).
inline std::vector<AgentId> trusted_neighborhood(const TrustLedger& ledger,
                                                 const NetworkTopology& topo, AgentId i) {
    if (!topo.is_legitimate(i)) {
        throw DomainError("trusted neighborhood is defined only for legitimate agents; agent " +
                          std::to_string(i) + " is malicious");
    }
    const auto [first, last] = ledger.observer_range(i);
    std::vector<AgentId> out;
    const auto betas = ledger.betas();
    for (std::size_t k = first; k < last; ++k) {
        if (betas[k] >= 0.0) {
            out.push_back(ledger.edges()[k].sender);
        }
    }
    return out;
}

/// Hoeffding bound e^{-2 E^2 (t+1)} on the probability that the aggregate has
/// the wrong sign after rounds 0..t.
inline double misclassification_bound(double offset, std::size_t round) {
    if (offset == 0.0 || !std::isfinite(offset)) {
        throw DomainError("trust offset must be non-zero; uninformative observations");
    }
    return std::exp(-2.0 * offset * offset * static_cast<double>(round + 1));
}

/// Source of i.i.d. trust observations drawn from a TrustModel.
class StochasticTrust {
public:
    StochasticTrust(TrustModel model, std::uint64_t seed) : model_(model), rng_(seed) {
        model_.validate();
    }

    void observe(const TrustLedger& ledger, const NetworkTopology& topo, std::size_t /*round*/,
                 std::span<double> out) {
        const auto& edges = ledger.edges();
        for (std::size_t k = 0; k < edges.size(); ++k) {
            out[k] = sample_trust(model_, topo.kind(edges[k].sender), rng_);
        }
    }

    const TrustModel& model() const noexcept { return model_; }

private:
    TrustModel model_;
    Rng rng_;
};

/// Deterministic observation source driven by a callback (edge, round) -> alpha.
class ScriptedTrust {
public:
    using Script = std::function<double(const DirectedEdge&, std::size_t round)>;

    explicit ScriptedTrust(Script script) : script_(std::move(script)) {}

    void observe(const TrustLedger& ledger, const NetworkTopology& /*topo*/, std::size_t round,
                 std::span<double> out) {
        const auto& edges = ledger.edges();
        for (std::size_t k = 0; k < edges.size(); ++k) {
            out[k] = script_(edges[k], round);
        }
    }

private:
    Script script_;
};

/// Perfectly informative observations: 1 for legitimate senders, 0 for malicious.
inline ScriptedTrust perfect_trust(const NetworkTopology& topo) {
    return ScriptedTrust([&topo](const DirectedEdge& e, std::size_t) {
        return topo.is_legitimate(e.sender) ? 1.0 : 0.0;
    });
}

} // namespace trustcons
