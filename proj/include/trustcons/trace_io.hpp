#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trustcons/analysis.hpp"
#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/protocol.hpp"
#include "trustcons/topology.hpp"

namespace trustcons {

/// Everything needed to re-execute a stored run.
struct TraceMetadata {
    RunSpec spec;
    NetworkTopology topology;
    double x_nominal = 0.0;
    std::optional<std::size_t> recovery_time;
    std::size_t regime = 0;
    std::size_t gamma_index = 0;
    std::size_t run = 0;
};

inline nlohmann::json metadata_to_json(const TraceMetadata& m) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [i, j] : m.topology.edges()) {
        edges.push_back({i, j});
    }
    nlohmann::json j;
    j["format"] = "trustcons-trace-v1";
    j["seed"] = m.spec.seed;
    j["environment_seed"] =
        m.spec.environment_seed ? nlohmann::json(*m.spec.environment_seed) : nlohmann::json();
    j["horizon"] = m.spec.horizon;
    j["regime"] = m.regime;
    j["gamma_index"] = m.gamma_index;
    j["run"] = m.run;
    j["trust"] = {{"mu_legit", m.spec.trust.mean_legit},
                  {"mu_malicious", m.spec.trust.mean_malicious}};
    j["schedule"] = {{"c", m.spec.schedule.c}, {"gamma", m.spec.schedule.gamma}};
    j["malicious"] = {{"amplitude", m.spec.malicious.amplitude_factor},
                      {"period", m.spec.malicious.period},
                      {"noise", m.spec.malicious.noise_stddev},
                      {"eta", m.spec.malicious.eta},
                      {"mean_factor", m.spec.malicious.mean_factor}};
    j["topology"] = {{"n", m.topology.size()},
                     {"legit", m.topology.legit_count()},
                     {"seed", m.topology.seed},
                     {"radius", m.topology.radius},
                     {"resamples", m.topology.resample_count},
                     {"edges", edges}};
    j["x_nominal"] = m.x_nominal;
    j["recovery_time"] = m.recovery_time ? nlohmann::json(*m.recovery_time) : nlohmann::json();
    return j;
}

inline TraceMetadata metadata_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "trustcons-trace-v1") {
            throw ConfigError("unsupported trace format");
        }
        TraceMetadata m;
        m.spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("environment_seed") && !j.at("environment_seed").is_null()) {
            m.spec.environment_seed = j.at("environment_seed").get<std::uint64_t>();
        }
        m.spec.horizon = j.at("horizon").get<std::size_t>();
        m.regime = j.value("regime", std::size_t{0});
        m.gamma_index = j.value("gamma_index", std::size_t{0});
        m.run = j.value("run", std::size_t{0});
        m.spec.trust = TrustModel(j.at("trust").at("mu_legit").get<double>(),
                                  j.at("trust").at("mu_malicious").get<double>());
        m.spec.schedule = LambdaSchedule(j.at("schedule").at("c").get<double>(),
                                         j.at("schedule").at("gamma").get<double>());
        const auto& mal = j.at("malicious");
        m.spec.malicious.amplitude_factor = mal.at("amplitude").get<double>();
        m.spec.malicious.period = mal.at("period").get<double>();
        m.spec.malicious.noise_stddev = mal.at("noise").get<double>();
        m.spec.malicious.eta = mal.at("eta").get<double>();
        m.spec.malicious.mean_factor = mal.value("mean_factor", 2.0);
        const auto& topo = j.at("topology");
        std::vector<std::pair<AgentId, AgentId>> edges;
        for (const auto& e : topo.at("edges")) {
            edges.emplace_back(e.at(0).get<AgentId>(), e.at(1).get<AgentId>());
        }
        m.topology = NetworkTopology(topo.at("n").get<std::size_t>(),
                                     topo.at("legit").get<std::size_t>(), edges);
        m.topology.seed = topo.value("seed", std::uint64_t{0});
        m.topology.radius = topo.value("radius", 0.0);
        m.topology.resample_count = topo.value("resamples", std::size_t{0});
        m.x_nominal = j.at("x_nominal").get<double>();
        if (!j.at("recovery_time").is_null()) {
            m.recovery_time = j.at("recovery_time").get<std::size_t>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed trace metadata: ") + e.what());
    }
}

inline constexpr const char* kTraceHeader =
    "round,agent,state,contrib_legit,contrib_malicious,lambda,weights_nominal,ledger_hash";

/// Columnar trace: a `# {json}` metadata line, a header row, then one row per
/// (snapshot, agent). The step columns (lambda, weights_nominal, ledger_hash)
/// describe the update out of that snapshot and are empty on the final one.
inline void write_trace(std::ostream& os, const RunTrace& trace, const TraceMetadata& meta) {
    std::string out;
    out.reserve(trace.x_legit.size() * 96 + 4096);
    out += "# ";
    out += metadata_to_json(meta).dump();
    out += '\n';
    out += kTraceHeader;
    out += '\n';
    const std::size_t L = trace.legit_count;
    for (std::size_t k = 0; k < trace.snapshots(); ++k) {
        const bool has_step = k < trace.horizon;
        std::string step;
        if (has_step) {
            append_double(step, trace.lambda[k]);
            step += trace.weights_nominal[k] ? ",1," : ",0,";
            step += std::to_string(trace.ledger_hash[k]);
        } else {
            step = ",,";
        }
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t idx = k * L + i;
            out += std::to_string(k);
            out += ',';
            out += std::to_string(i);
            out += ',';
            append_double(out, trace.x_legit[idx]);
            out += ',';
            append_double(out, trace.contrib_legit[idx]);
            out += ',';
            append_double(out, trace.contrib_malicious[idx]);
            out += ',';
            out += step;
            out += '\n';
        }
    }
    os << out;
}

inline std::pair<TraceMetadata, RunTrace> read_trace(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) {
        throw ConfigError("trace must start with a '# {json}' metadata line");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line.substr(2));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("trace metadata is not valid JSON: ") + e.what());
    }
    TraceMetadata meta = metadata_from_json(j);
    if (!std::getline(is, line) || trim(line) != kTraceHeader) {
        throw ConfigError("unexpected trace header row");
    }

    RunTrace trace;
    trace.seed = meta.spec.seed;
    trace.horizon = meta.spec.horizon;
    trace.legit_count = meta.topology.legit_count();
    trace.x_nominal = meta.x_nominal;
    const std::size_t L = trace.legit_count;
    const std::size_t rows = (trace.horizon + 1) * L;
    trace.x_legit.resize(rows);
    trace.contrib_legit.resize(rows);
    trace.contrib_malicious.resize(rows);
    trace.lambda.resize(trace.horizon);
    trace.weights_nominal.resize(trace.horizon);
    trace.ledger_hash.resize(trace.horizon);

    std::vector<bool> seen(rows, false);
    std::size_t lineno = 2;
    std::vector<std::string_view> fields;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        fields.clear();
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 8) {
            throw ConfigError("trace line " + std::to_string(lineno) + ": expected 8 columns");
        }
        const auto k = parse_integer<std::size_t>(fields[0]);
        const auto i = parse_integer<std::size_t>(fields[1]);
        if (k > trace.horizon || i >= L) {
            throw ConfigError("trace line " + std::to_string(lineno) + ": index out of range");
        }
        const std::size_t idx = k * L + i;
        trace.x_legit[idx] = parse_double(fields[2]);
        trace.contrib_legit[idx] = parse_double(fields[3]);
        trace.contrib_malicious[idx] = parse_double(fields[4]);
        seen[idx] = true;
        if (k < trace.horizon && i == 0) {
            trace.lambda[k] = parse_double(fields[5]);
            trace.weights_nominal[k] = parse_integer<int>(fields[6]) != 0 ? 1 : 0;
            trace.ledger_hash[k] = parse_integer<std::uint64_t>(fields[7]);
        }
    }
    for (std::size_t idx = 0; idx < rows; ++idx) {
        if (!seen[idx]) {
            throw ConfigError("trace is missing round " + std::to_string(idx / L) + " agent " +
                              std::to_string(idx % L));
        }
        trace.max_decomposition_error =
            std::max(trace.max_decomposition_error,
                     std::abs(trace.x_legit[idx] - (trace.contrib_legit[idx] +
                                                    trace.contrib_malicious[idx])));
    }
    return {std::move(meta), std::move(trace)};
}

inline void save_trace(const std::string& path, const RunTrace& trace, const TraceMetadata& meta) {
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    write_trace(os, trace, meta);
    if (!os) {
        throw IoError("write to '" + path + "' failed");
    }
}

inline std::pair<TraceMetadata, RunTrace> load_trace(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open trace file '" + path + "'");
    }
    return read_trace(is);
}

/// Outcome of re-executing a run and checking it against its record.
struct ReplayReport {
    std::size_t horizon = 0;
    bool states_match = true;        ///< recorded x, a, b equal the re-executed ones
    double max_state_diff = 0.0;
    std::size_t hash_mismatches = 0;
    double max_decomposition_error = 0.0;
    double max_row_sum_error = 0.0;
    std::optional<std::size_t> recorded_tf;
    std::optional<std::size_t> recomputed_tf;
    /// W^L_s == nominal and W^M_s == 0 for every s >= recorded T_f (vacuous when unresolved).
    bool weights_recovered = true;
    std::optional<std::size_t> first_non_nominal_after_tf;
    DeviationMetrics metrics;

    bool ok(double decomposition_tol = 1e-12) const {
        return states_match && hash_mismatches == 0 &&
               max_decomposition_error <= decomposition_tol && recorded_tf == recomputed_tf &&
               weights_recovered;
    }
};

/// Re-executes `spec` on `topo` and compares each round's weight matrices
/// directly with the nominal ones. When `recorded` is given its states and
/// ledger hashes must match the re-execution; `recorded_tf` is the recovery
/// time claimed by the record.
inline ReplayReport replay_run(const NetworkTopology& topo, const NominalModel& nominal,
                               const RunSpec& spec, const RunTrace* recorded,
                               std::optional<std::size_t> recorded_tf) {
    std::vector<std::uint8_t> matrix_nominal;
    matrix_nominal.reserve(spec.horizon);
    double row_sum_error = 0.0;
    const RunTrace fresh = run_protocol(
        topo, nominal, spec,
        [&](std::size_t, const TrustLedger&, const WeightMatrix& w, const SimulationState&) {
            matrix_nominal.push_back(w.equals_nominal(nominal.weights) ? 1 : 0);
            row_sum_error = std::max(row_sum_error, w.max_row_sum_error());
        });

    ReplayReport r;
    r.horizon = spec.horizon;
    r.recorded_tf = recorded_tf;
    r.max_row_sum_error = row_sum_error;

    // Recovery time from the matrix comparison alone.
    RunTrace by_matrix;
    by_matrix.weights_nominal = matrix_nominal;
    r.recomputed_tf = empirical_recovery_time(by_matrix);

    if (recorded_tf) {
        for (std::size_t s = *recorded_tf; s < matrix_nominal.size(); ++s) {
            if (!matrix_nominal[s]) {
                r.weights_recovered = false;
                r.first_non_nominal_after_tf = s;
                break;
            }
        }
    }

    const RunTrace& checked = recorded ? *recorded : fresh;
    if (recorded) {
        if (recorded->x_legit.size() != fresh.x_legit.size() ||
            recorded->ledger_hash.size() != fresh.ledger_hash.size()) {
            r.states_match = false;
        } else {
            for (std::size_t k = 0; k < fresh.x_legit.size(); ++k) {
                const double d = std::max({std::abs(recorded->x_legit[k] - fresh.x_legit[k]),
                                           std::abs(recorded->contrib_legit[k] - fresh.contrib_legit[k]),
                                           std::abs(recorded->contrib_malicious[k] -
                                                    fresh.contrib_malicious[k])});
                r.max_state_diff = std::max(r.max_state_diff, d);
            }
            r.states_match = r.max_state_diff == 0.0;
            for (std::size_t s = 0; s < fresh.ledger_hash.size(); ++s) {
                r.hash_mismatches += recorded->ledger_hash[s] != fresh.ledger_hash[s] ? 1 : 0;
            }
        }
    }
    r.max_decomposition_error = checked.max_decomposition_error;
    r.metrics = deviation_metrics(checked, fresh.x_nominal);
    return r;
}

inline ReplayReport replay_trace(const TraceMetadata& meta, const RunTrace& recorded) {
    const NominalModel nominal = make_nominal(meta.topology);
    return replay_run(meta.topology, nominal, meta.spec, &recorded, meta.recovery_time);
}

} // namespace trustcons
