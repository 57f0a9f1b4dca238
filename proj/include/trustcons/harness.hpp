#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "trustcons/analysis.hpp"
#include "trustcons/config.hpp"
#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/protocol.hpp"
#include "trustcons/topology.hpp"
#include "trustcons/trace_io.hpp"

namespace trustcons {

/// Runs fn(task) for task in [0, count) on `workers` threads pulling from a
/// shared counter. The first exception thrown by any task is rethrown.
inline void parallel_for(std::size_t count, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = std::min(workers, std::max<std::size_t>(count, 1));
    if (workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) {
            fn(k);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t k = next.fetch_add(1); k < count; k = next.fetch_add(1)) {
                try {
                    fn(k);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                    next.store(count);
                }
            }
        });
    }
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

inline NetworkTopology build_topology(const ExperimentConfig& cfg) {
    if (!cfg.topology_file.empty()) {
        NetworkTopology topo = load_topology(cfg.topology_file);
        if (topo.size() != cfg.agents || topo.legit_count() != cfg.legit) {
            throw ConfigError("topology.file: agent counts disagree with topology.n/topology.legit");
        }
        if (!topo.legit_subgraph_connected()) {
            throw ConfigError("topology.file: legitimate subgraph is disconnected");
        }
        return topo;
    }
    RggOptions opts;
    opts.legit_count = cfg.legit;
    opts.max_resamples = cfg.max_resamples;
    return generate_rgg(cfg.agents, cfg.radius, cfg.topology_seed, opts);
}

/// Seed of run `run` in cell (regime, gamma_index).
inline std::uint64_t cell_run_seed(std::uint64_t master, std::size_t regime,
                                   std::size_t gamma_index, std::size_t run) {
    return derive_seed(master, {regime, gamma_index, run});
}

/// Environment seed shared by run `run` of every cell when runs are paired.
inline std::uint64_t environment_seed(std::uint64_t master, std::size_t run) {
    return derive_seed(master, {std::uint64_t{0xE17}, run});
}

/// Per-run outcome kept by the sweep.
struct RunSummary {
    std::uint64_t seed = 0;
    double final_max_total = 0.0;
    double final_max_legit = 0.0;
    double final_max_malicious = 0.0;
    std::optional<std::size_t> recovery_time;
    double max_decomposition_error = 0.0;
    double max_row_sum_error = 0.0;
    double max_triangle_violation = 0.0;
};

struct SweepCell {
    std::size_t regime = 0;
    TrustModel trust;
    std::size_t gamma_index = 0;
    double gamma = 0.0;
    std::size_t runs = 0;
    double e_mean = 0.0, e_se = 0.0;
    double el_mean = 0.0, el_se = 0.0;
    double em_mean = 0.0, em_se = 0.0;
    double tf_mean = 0.0;  ///< over resolved runs only
    std::size_t tf_resolved = 0;
    std::size_t tf_unresolved = 0;
    double exceed_frac = 0.0;  ///< fraction of runs with final max deviation > epsilon
    double eta_u_total = 0.0;  ///< bound at epsilon with this cell's T_f samples
    std::vector<RunSummary> per_run;
};

struct SweepResult {
    std::size_t legit_count = 0;
    std::size_t malicious_count = 0;
    std::size_t d_max = 0;
    double min_perron = 0.0;
    double epsilon = 0.0;
    std::vector<SweepCell> cells;  ///< regime-major, gammas in config order

    const SweepCell& cell(std::size_t regime, std::size_t gamma_index) const {
        for (const auto& c : cells) {
            if (c.regime == regime && c.gamma_index == gamma_index) {
                return c;
            }
        }
        throw ConfigError("no sweep cell for regime " + std::to_string(regime) + ", gamma index " +
                          std::to_string(gamma_index));
    }
};

namespace detail {

inline void mean_and_se(const std::vector<double>& xs, double& mean, double& se) {
    const double n = static_cast<double>(xs.size());
    mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= n;
    if (xs.size() < 2) {
        se = 0.0;
        return;
    }
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

} // namespace detail

/// Optional per-run hook, e.g. to persist traces. Called from worker threads.
using TraceSink = std::function<void(const TraceMetadata&, const RunTrace&)>;

/// Restricts a sweep to some cells. Seeds still follow the full grid's indices,
/// so a selected run is identical to the same run of the full sweep.
struct CellSelection {
    std::optional<std::size_t> regime;
    std::optional<std::size_t> gamma_index;

    bool contains(std::size_t r, std::size_t g) const noexcept {
        return (!regime || *regime == r) && (!gamma_index || *gamma_index == g);
    }
};

/// Monte Carlo sweep over every selected (regime, gamma) cell on one fixed
/// topology. Results depend only on the configuration and master seed, not on
/// `workers`.
inline SweepResult run_experiment(const ExperimentConfig& cfg, const TraceSink& sink = {},
                                  const CellSelection& selection = {}) {
    cfg.validate();
    const NetworkTopology topo = build_topology(cfg);
    const NominalModel nominal = make_nominal(topo);

    SweepResult result;
    result.legit_count = topo.legit_count();
    result.malicious_count = topo.malicious_count();
    result.d_max = max_legit_in_degree(topo);
    result.min_perron = nominal.min_perron();
    result.epsilon = cfg.epsilon;

    std::vector<std::pair<std::size_t, std::size_t>> grid;
    for (std::size_t r = 0; r < cfg.regimes.size(); ++r) {
        for (std::size_t g = 0; g < cfg.gammas.size(); ++g) {
            if (selection.contains(r, g)) {
                grid.emplace_back(r, g);
            }
        }
    }
    if (grid.empty()) {
        throw ConfigError("cell selection matches no (regime, gamma) cell");
    }
    const std::size_t n_tasks = grid.size() * cfg.runs;
    std::vector<RunSummary> summaries(n_tasks);

    parallel_for(n_tasks, cfg.workers, [&](std::size_t task) {
        const std::size_t run = task % cfg.runs;
        const auto [r, g] = grid[task / cfg.runs];
        RunSpec spec;
        spec.trust = cfg.regimes[r];
        spec.schedule = LambdaSchedule(cfg.c, cfg.gammas[g]);
        spec.malicious = cfg.malicious;
        spec.horizon = cfg.horizon;
        spec.seed = cell_run_seed(cfg.master_seed, r, g, run);
        if (cfg.paired) {
            spec.environment_seed = environment_seed(cfg.master_seed, run);
        }
        const RunTrace trace = run_protocol(topo, nominal, spec);
        const DeviationMetrics m = deviation_metrics(trace, trace.x_nominal);
        RunSummary& s = summaries[task];
        s.seed = spec.seed;
        s.final_max_total = m.final_max_total;
        s.final_max_legit = m.final_max_legit;
        s.final_max_malicious = m.final_max_malicious;
        s.recovery_time = empirical_recovery_time(trace);
        s.max_decomposition_error = trace.max_decomposition_error;
        s.max_row_sum_error = trace.max_row_sum_error.empty()
                                  ? 0.0
                                  : *std::max_element(trace.max_row_sum_error.begin(),
                                                      trace.max_row_sum_error.end());
        s.max_triangle_violation = m.max_triangle_violation;
        if (sink) {
            TraceMetadata meta;
            meta.spec = spec;
            meta.topology = topo;
            meta.x_nominal = trace.x_nominal;
            meta.recovery_time = s.recovery_time;
            meta.regime = r;
            meta.gamma_index = g;
            meta.run = run;
            sink(meta, trace);
        }
    });

    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        const auto [r, g] = grid[idx];
        SweepCell cell;
        cell.regime = r;
        cell.trust = cfg.regimes[r];
        cell.gamma_index = g;
        cell.gamma = cfg.gammas[g];
        cell.runs = cfg.runs;
        const std::size_t base = idx * cfg.runs;
        cell.per_run.assign(summaries.begin() + static_cast<std::ptrdiff_t>(base),
                            summaries.begin() + static_cast<std::ptrdiff_t>(base + cfg.runs));
        std::vector<double> e, el, em;
        std::vector<std::size_t> tfs;
        std::size_t exceed = 0;
        for (const auto& s : cell.per_run) {
            e.push_back(s.final_max_total);
            el.push_back(s.final_max_legit);
            em.push_back(s.final_max_malicious);
            exceed += s.final_max_total > cfg.epsilon ? 1 : 0;
            if (s.recovery_time) {
                tfs.push_back(*s.recovery_time);
            } else {
                ++cell.tf_unresolved;
            }
        }
        detail::mean_and_se(e, cell.e_mean, cell.e_se);
        detail::mean_and_se(el, cell.el_mean, cell.el_se);
        detail::mean_and_se(em, cell.em_mean, cell.em_se);
        cell.tf_resolved = tfs.size();
        cell.exceed_frac = static_cast<double>(exceed) / static_cast<double>(cfg.runs);
        if (!tfs.empty()) {
            double sum = 0.0;
            for (std::size_t t : tfs) {
                sum += static_cast<double>(t);
            }
            cell.tf_mean = sum / static_cast<double>(tfs.size());

            BoundParams bp;
            bp.c = cfg.c;
            bp.gamma = cell.gamma;
            bp.d_max = result.d_max;
            bp.offset_legit = cell.trust.offset_legit();
            bp.offset_malicious = cell.trust.offset_malicious();
            bp.legit_count = result.legit_count;
            bp.malicious_count = result.malicious_count;
            bp.min_perron = result.min_perron;
            bp.eta = cfg.malicious.eta;
            bp.tf_samples = tfs;
            cell.eta_u_total = bp.eta * u_total(cfg.epsilon, bp);
        } else {
            cell.tf_mean = std::nan("");
            cell.eta_u_total = std::nan("");
        }
        result.cells.push_back(std::move(cell));
    }
    return result;
}

inline constexpr const char* kSweepHeader =
    "regime,mu_legit,mu_malicious,gamma,runs,e_mean,e_se,eL_mean,eL_se,eM_mean,eM_se,"
    "tf_mean,tf_resolved,tf_unresolved,exceed_frac,eta_u_total";

inline void write_sweep_csv(std::ostream& os, const SweepResult& result) {
    std::string out = kSweepHeader;
    out += '\n';
    for (const auto& c : result.cells) {
        out += std::to_string(c.regime) + ",";
        append_double(out, c.trust.mean_legit);
        out += ',';
        append_double(out, c.trust.mean_malicious);
        out += ',';
        append_double(out, c.gamma);
        out += ',' + std::to_string(c.runs);
        for (double v : {c.e_mean, c.e_se, c.el_mean, c.el_se, c.em_mean, c.em_se, c.tf_mean}) {
            out += ',';
            append_double(out, v);
        }
        out += ',' + std::to_string(c.tf_resolved) + ',' + std::to_string(c.tf_unresolved) + ',';
        append_double(out, c.exceed_frac);
        out += ',';
        append_double(out, c.eta_u_total);
        out += '\n';
    }
    os << out;
}

inline constexpr const char* kBoundHeader =
    "gamma,c,Tf,ell1,ell2,ell,s_gamma,xi,u_leg,u_mal,u_total,eta_u_total";

inline void write_bound_row(std::ostream& os, const BoundReport& r) {
    std::string out;
    bool first = true;
    for (double v : {r.gamma, r.c, r.tf, r.ell1, r.ell2, r.ell, r.s_gamma, r.xi, r.u_leg, r.u_mal,
                     r.u_total, r.eta_u_total}) {
        if (!first) {
            out += ',';
        }
        first = false;
        append_double(out, v);
    }
    out += '\n';
    os << out;
}

inline constexpr const char* kEllProfileHeader = "gamma,c,Tf,ell1,ell2,ell,s_gamma,neg_ell";

inline void write_ell_profile_csv(std::ostream& os, const EllProfile& p) {
    std::string out = kEllProfileHeader;
    out += '\n';
    for (const auto& r : p.rows) {
        append_double(out, r.gamma);
        out += ',';
        append_double(out, r.c);
        out += ',' + std::to_string(r.tf);
        for (double v : {r.ell1, r.ell2, r.ell, r.s_gamma, r.neg_ell}) {
            out += ',';
            append_double(out, v);
        }
        out += '\n';
    }
    os << out;
}

enum class FigureKind { deviation_sweep, ell_profile, lambda_schedule, misclassification_bounds };

inline FigureKind parse_figure_kind(const std::string& name) {
    if (name == "deviation-sweep") {
        return FigureKind::deviation_sweep;
    }
    if (name == "ell-profile") {
        return FigureKind::ell_profile;
    }
    if (name == "lambda-schedule") {
        return FigureKind::lambda_schedule;
    }
    if (name == "misclassification-bounds") {
        return FigureKind::misclassification_bounds;
    }
    throw ConfigError("unknown figure kind '" + name +
                      "' (expected deviation-sweep, ell-profile, lambda-schedule or "
                      "misclassification-bounds)");
}

struct FigurePoint {
    std::string series;
    double x = 0.0;
    double y = 0.0;
    double error = 0.0;
};

struct FigureOptions {
    std::size_t tf_min = 2;
    std::size_t tf_max = 10;
    double gamma_min = 1e-3;
    double gamma_max = 5.0;
    std::size_t gamma_points = 200;
};

/// Plot-ready long-format series for one figure kind. The deviation sweep
/// reuses `sweep` when given, otherwise runs it.
inline std::vector<FigurePoint> figure_data(FigureKind kind, const ExperimentConfig& cfg,
                                            const FigureOptions& opts = {},
                                            const SweepResult* sweep = nullptr) {
    cfg.validate();
    std::vector<FigurePoint> pts;
    switch (kind) {
    case FigureKind::lambda_schedule:
        for (double g : cfg.gammas) {
            const LambdaSchedule sched(cfg.c, g);
            const std::string name = "gamma=" + format_double(g);
            for (std::size_t t = 0; t < cfg.horizon; ++t) {
                pts.push_back({name, static_cast<double>(t), lambda_at(sched, t), 0.0});
            }
        }
        break;
    case FigureKind::misclassification_bounds: {
        // 0.55 - 0.5 and 0.5 - 0.45 differ in the last bits; merge them.
        auto rounded = [](double e) { return std::round(std::abs(e) * 1e12) / 1e12; };
        std::set<double> offsets;
        for (const auto& r : cfg.regimes) {
            offsets.insert(rounded(r.offset_legit()));
            offsets.insert(rounded(r.offset_malicious()));
        }
        for (double e : offsets) {
            const std::string name = "E=" + format_double(e);
            for (std::size_t t = 0; t < cfg.horizon; ++t) {
                pts.push_back({name, static_cast<double>(t), misclassification_bound(e, t), 0.0});
            }
        }
        break;
    }
    case FigureKind::ell_profile: {
        const NetworkTopology topo = build_topology(cfg);
        const NominalModel nominal = make_nominal(topo);
        const auto grid = log_grid(opts.gamma_min, opts.gamma_max, opts.gamma_points);
        const EllProfile p = ell_profile(cfg.c, max_legit_in_degree(topo), nominal.min_perron(),
                                         opts.tf_min, opts.tf_max, grid);
        for (const auto& r : p.rows) {
            pts.push_back({"Tf=" + std::to_string(r.tf), r.gamma, r.neg_ell, 0.0});
        }
        break;
    }
    case FigureKind::deviation_sweep: {
        SweepResult local;
        if (!sweep) {
            local = run_experiment(cfg);
            sweep = &local;
        }
        for (const auto& c : sweep->cells) {
            const std::string regime = "muL=" + format_double(c.trust.mean_legit) +
                                       "/muM=" + format_double(c.trust.mean_malicious);
            pts.push_back({"e/" + regime, c.gamma, c.e_mean, c.e_se});
            pts.push_back({"eL/" + regime, c.gamma, c.el_mean, c.el_se});
            pts.push_back({"eM/" + regime, c.gamma, c.em_mean, c.em_se});
        }
        break;
    }
    }
    return pts;
}

inline void write_figure_csv(std::ostream& os, const std::vector<FigurePoint>& pts) {
    std::string out = "series,x,y,error\n";
    for (const auto& p : pts) {
        out += p.series;
        out += ',';
        append_double(out, p.x);
        out += ',';
        append_double(out, p.y);
        out += ',';
        append_double(out, p.error);
        out += '\n';
    }
    os << out;
}

} // namespace trustcons
