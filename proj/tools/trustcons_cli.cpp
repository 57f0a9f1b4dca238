// trustcons command line front end.
//
// Configuration precedence (later wins): built-in defaults, the --config
// file, --set key=value overrides in order, then dedicated flags such as
// --seed or --runs.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "trustcons/trustcons.hpp"

namespace fs = std::filesystem;
using namespace trustcons;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args, bool required) {
    auto* opt = cmd->add_option("--config", args.path, "Flat key = value configuration file");
    if (required) {
        opt->required();
    }
    cmd->add_option("--set", args.overrides, "Override one configuration key (key=value)");
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
    ExperimentConfig cfg = args.path.empty() ? ExperimentConfig{} : load_config(args.path);
    for (const auto& o : args.overrides) {
        cfg.set_assignment(o);
    }
    return cfg;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    }
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os << content;
    if (!os) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

std::string runs_csv(const SweepResult& result) {
    std::ostringstream os;
    os << "regime,gamma,run,seed,e_final,eL_final,eM_final,tf,max_decomposition_error,"
          "max_row_sum_error\n";
    for (const auto& c : result.cells) {
        for (std::size_t k = 0; k < c.per_run.size(); ++k) {
            const auto& s = c.per_run[k];
            std::string line = std::to_string(c.regime) + ",";
            append_double(line, c.gamma);
            line += "," + std::to_string(k) + "," + std::to_string(s.seed);
            for (double v : {s.final_max_total, s.final_max_legit, s.final_max_malicious}) {
                line += ',';
                append_double(line, v);
            }
            line += ',';
            line += s.recovery_time ? std::to_string(*s.recovery_time) : std::string("unresolved");
            line += ',';
            append_double(line, s.max_decomposition_error);
            line += ',';
            append_double(line, s.max_row_sum_error);
            os << line << '\n';
        }
    }
    return os.str();
}

std::vector<std::size_t> read_tf_samples(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open recovery-time samples '" + path + "'");
    }
    std::vector<std::size_t> out;
    std::string token;
    std::size_t line_no = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        std::istringstream ls(line);
        while (std::getline(ls, token, ',')) {
            const auto t = trim(token);
            if (t.empty() || t.front() == '#') {
                continue;
            }
            try {
                out.push_back(parse_integer<std::size_t>(t));
            } catch (const ConfigError& e) {
                throw ConfigError(path + ": line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    if (out.empty()) {
        throw ConfigError(path + ": no recovery-time samples");
    }
    return out;
}

int run_simulate(const ConfigArgs& cargs, std::optional<std::uint64_t> seed,
                 std::optional<std::size_t> runs, std::optional<std::size_t> horizon,
                 std::size_t regime, std::optional<double> gamma, std::optional<std::string> out,
                 bool no_traces) {
    ExperimentConfig cfg = resolve_config(cargs);
    if (seed) cfg.master_seed = *seed;
    if (runs) cfg.runs = *runs;
    if (horizon) cfg.horizon = *horizon;
    if (out) cfg.output_dir = *out;
    if (regime >= cfg.regimes.size()) {
        throw ConfigError("--regime: index " + std::to_string(regime) + " out of range (" +
                          std::to_string(cfg.regimes.size()) + " regimes)");
    }
    CellSelection selection;
    selection.regime = regime;
    if (gamma) cfg.gammas = {*gamma};
    cfg.validate();

    const fs::path dir(cfg.output_dir);
    const fs::path trace_dir = dir / "traces";
    ensure_dir(trace_dir);
    TraceSink sink;
    if (!no_traces) {
        sink = [&](const TraceMetadata& meta, const RunTrace& trace) {
            const std::string name = "trace_g" + std::to_string(meta.gamma_index) + "_r" +
                                     std::to_string(meta.run) + ".csv";
            save_trace((trace_dir / name).string(), trace, meta);
        };
    }
    const SweepResult result = run_experiment(cfg, sink, selection);
    std::ostringstream summary;
    write_sweep_csv(summary, result);
    write_file(dir / "summary.csv", summary.str());
    write_file(dir / "runs.csv", runs_csv(result));
    std::cout << summary.str();
    return 0;
}

int run_sweep(const ConfigArgs& cargs, std::optional<std::size_t> workers,
              std::optional<std::string> out) {
    ExperimentConfig cfg = resolve_config(cargs);
    if (workers) cfg.workers = *workers;
    if (out) cfg.output_dir = *out;
    cfg.validate();
    const fs::path dir(cfg.output_dir);
    ensure_dir(dir);
    const SweepResult result = run_experiment(cfg);
    std::ostringstream os;
    write_sweep_csv(os, result);
    write_file(dir / "sweep.csv", os.str());
    write_file(dir / "runs.csv", runs_csv(result));
    std::cout << os.str();
    return 0;
}

int run_figure(const ConfigArgs& cargs, const std::string& kind, std::optional<std::string> out,
               const FigureOptions& fopts) {
    ExperimentConfig cfg = resolve_config(cargs);
    if (out) cfg.output_dir = *out;
    const FigureKind k = parse_figure_kind(kind);
    const auto pts = figure_data(k, cfg, fopts);
    const fs::path dir(cfg.output_dir);
    ensure_dir(dir);
    std::ostringstream os;
    write_figure_csv(os, pts);
    write_file(dir / ("figure_" + kind + ".csv"), os.str());
    std::cout << os.str();
    return 0;
}

int run_replay(const std::string& path, double tol) {
    const auto [meta, recorded] = load_trace(path);
    const ReplayReport r = replay_trace(meta, recorded);
    std::string out;
    out += "trace " + path + "\n";
    out += "horizon " + std::to_string(r.horizon) + "\n";
    out += std::string("states_match ") + (r.states_match ? "yes" : "no") + "\n";
    out += "max_state_diff ";
    append_double(out, r.max_state_diff);
    out += "\nledger_hash_mismatches " + std::to_string(r.hash_mismatches) + "\n";
    out += "max_decomposition_error ";
    append_double(out, r.max_decomposition_error);
    out += "\nmax_row_sum_error ";
    append_double(out, r.max_row_sum_error);
    out += "\nrecorded_tf " + (r.recorded_tf ? std::to_string(*r.recorded_tf) : "unresolved");
    out += "\nrecomputed_tf " + (r.recomputed_tf ? std::to_string(*r.recomputed_tf) : "unresolved");
    out += std::string("\nweights_recovered ") + (r.weights_recovered ? "yes" : "no");
    if (r.first_non_nominal_after_tf) {
        out += " (first non-nominal step " + std::to_string(*r.first_non_nominal_after_tf) + ")";
    }
    out += "\nfinal_max_e ";
    append_double(out, r.metrics.final_max_total);
    out += "\nfinal_max_eL ";
    append_double(out, r.metrics.final_max_legit);
    out += "\nfinal_max_eM ";
    append_double(out, r.metrics.final_max_malicious);
    out += "\nmax_triangle_violation ";
    append_double(out, r.metrics.max_triangle_violation);
    out += std::string("\nstatus ") + (r.ok(tol) ? "ok" : "FAILED") + "\n";
    std::cout << out;
    if (!r.ok(tol)) {
        throw ProtocolViolation("replay of '" + path + "' does not reproduce the stored run");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulator and bound calculator for trust-and-confidence resilient consensus"};
    app.require_subcommand(1);

    // simulate
    ConfigArgs sim_cfg;
    std::optional<std::uint64_t> sim_seed;
    std::optional<std::size_t> sim_runs, sim_horizon;
    std::size_t sim_regime = 0;
    std::optional<double> sim_gamma;
    std::optional<std::string> sim_out;
    bool sim_no_traces = false;
    auto* sim = app.add_subcommand("simulate", "Run one trust regime and store per-run traces");
    add_config_args(sim, sim_cfg, true);
    sim->add_option("--seed", sim_seed, "Master seed");
    sim->add_option("--runs", sim_runs, "Runs per gamma value");
    sim->add_option("--horizon", sim_horizon, "Rounds per run");
    sim->add_option("--regime", sim_regime, "Index into trust.regimes")->capture_default_str();
    sim->add_option("--gamma", sim_gamma, "Use this single gamma instead of the grid");
    sim->add_option("--out", sim_out, "Output directory");
    sim->add_flag("--no-traces", sim_no_traces, "Skip writing per-run trace files");

    // sweep
    ConfigArgs sweep_cfg;
    std::optional<std::size_t> sweep_workers;
    std::optional<std::string> sweep_out;
    auto* sweep = app.add_subcommand("sweep", "Run every (regime, gamma) cell and write sweep.csv");
    add_config_args(sweep, sweep_cfg, true);
    sweep->add_option("--workers", sweep_workers, "Worker threads (0 = all cores)");
    sweep->add_option("--out", sweep_out, "Output directory");

    // bounds
    BoundParams bp;
    double e_legit = 0.2, e_mal = -0.2, epsilon = 0.1;
    std::optional<std::size_t> tf_single;
    std::string tf_path;
    auto* bounds = app.add_subcommand("bounds", "Evaluate the closed-form deviation bounds");
    bounds->add_option("--c", bp.c, "Confidence scale c")->required();
    bounds->add_option("--gamma", bp.gamma, "Confidence decay rate")->required();
    bounds->add_option("--dM", bp.d_max, "Largest legitimate neighborhood size")->required();
    bounds->add_option("--EL", e_legit, "E_L = E[alpha] - 1/2 for legitimate senders")->required();
    bounds->add_option("--EM", e_mal, "E_M = E[alpha] - 1/2 for malicious senders")->required();
    bounds->add_option("--L", bp.legit_count, "Number of legitimate agents")->required();
    bounds->add_option("--M", bp.malicious_count, "Number of malicious agents")->required();
    bounds->add_option("--vm", bp.min_perron, "Smallest Perron vector entry")->required();
    bounds->add_option("--eta", bp.eta, "State bound")->required();
    auto* tf_file_opt =
        bounds->add_option("--tf-samples", tf_path, "File of recovery-time samples");
    bounds->add_option("--tf", tf_single, "Single recovery time")->excludes(tf_file_opt);
    bounds->add_option("--epsilon", epsilon, "Deviation threshold")->capture_default_str();

    // figure-ell
    double fe_c = 0.9, fe_vm = 0.0;
    std::size_t fe_dm = 0;
    FigureOptions fe_opts;
    bool fe_argmin = false;
    auto* fig_ell = app.add_subcommand("figure-ell", "Tabulate -v_m * ell over a log gamma grid");
    fig_ell->add_option("--c", fe_c, "Confidence scale c")->required();
    fig_ell->add_option("--dM", fe_dm, "Largest legitimate neighborhood size")->required();
    fig_ell->add_option("--vm", fe_vm, "Smallest Perron vector entry")->required();
    fig_ell->add_option("--tf-min", fe_opts.tf_min)->capture_default_str();
    fig_ell->add_option("--tf-max", fe_opts.tf_max)->capture_default_str();
    fig_ell->add_option("--gamma-min", fe_opts.gamma_min)->capture_default_str();
    fig_ell->add_option("--gamma-max", fe_opts.gamma_max)->capture_default_str();
    fig_ell->add_option("--points", fe_opts.gamma_points)->capture_default_str();
    fig_ell->add_flag("--argmin", fe_argmin, "Print argmin gamma per Tf instead of the table");

    // replay
    std::string replay_path;
    double replay_tol = 1e-12;
    auto* replay = app.add_subcommand("replay", "Re-execute a stored trace and verify it");
    replay->add_option("--trace", replay_path, "Trace file written by simulate")->required();
    replay->add_option("--tol", replay_tol, "Decomposition tolerance")->capture_default_str();

    // figure
    ConfigArgs fig_cfg;
    std::string fig_kind;
    std::optional<std::string> fig_out;
    FigureOptions fig_opts;
    auto* figure = app.add_subcommand("figure", "Write plot-ready long-format figure data");
    figure->add_option("--kind", fig_kind,
                    "deviation-sweep, ell-profile, lambda-schedule or misclassification-bounds")
        ->required();
    add_config_args(figure, fig_cfg, false);
    figure->add_option("--out", fig_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*sim) {
            return run_simulate(sim_cfg, sim_seed, sim_runs, sim_horizon, sim_regime, sim_gamma,
                                sim_out, sim_no_traces);
        }
        if (*sweep) {
            return run_sweep(sweep_cfg, sweep_workers, sweep_out);
        }
        if (*bounds) {
            bp.offset_legit = e_legit;
            bp.offset_malicious = e_mal;
            if (!tf_path.empty()) {
                bp.tf_samples = read_tf_samples(tf_path);
            } else if (tf_single) {
                bp.tf_samples = {*tf_single};
            } else {
                const std::size_t legit_edges = bp.legit_count * bp.d_max;
                const std::size_t mal_edges = bp.legit_count * std::min(bp.d_max, bp.malicious_count);
                const double proxy =
                    recovery_time_union_bound(legit_edges, mal_edges, e_legit, e_mal);
                bp.tf_samples = {static_cast<std::size_t>(std::ceil(proxy))};
                std::cerr << "note: no recovery-time input; using union-bound estimate Tf = "
                          << bp.tf_samples.front() << '\n';
            }
            const BoundReport r = evaluate_bounds(epsilon, bp);
            std::cout << kBoundHeader << '\n';
            write_bound_row(std::cout, r);
            return 0;
        }
        if (*fig_ell) {
            if (fe_opts.tf_min > fe_opts.tf_max) {
                throw ConfigError("--tf-min must not exceed --tf-max");
            }
            const auto grid = log_grid(fe_opts.gamma_min, fe_opts.gamma_max, fe_opts.gamma_points);
            const EllProfile p =
                ell_profile(fe_c, fe_dm, fe_vm, fe_opts.tf_min, fe_opts.tf_max, grid);
            if (fe_argmin) {
                std::string out = "Tf,argmin_gamma,interior\n";
                for (std::size_t k = 0; k < p.tf_values.size(); ++k) {
                    out += std::to_string(p.tf_values[k]) + ",";
                    append_double(out, p.argmin_gamma[k]);
                    out += p.argmin_interior[k] ? ",yes\n" : ",no\n";
                }
                std::cout << out;
            } else {
                write_ell_profile_csv(std::cout, p);
            }
            return 0;
        }
        if (*replay) {
            return run_replay(replay_path, replay_tol);
        }
        if (*figure) {
            return run_figure(fig_cfg, fig_kind, fig_out, fig_opts);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return static_cast<int>(ExitCode::numerical);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::io);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numerical);
    }
    return 0;
}
