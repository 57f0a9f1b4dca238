#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/protocol.hpp"
#include "trustcons/trust.hpp"

namespace trustcons {

/// Full description of a Monte Carlo experiment. Defaults reproduce the
/// reference setup: 50 legitimate + 10 malicious agents on a radius-0.2
/// geometric graph, c = 0.9, 1000 rounds, 1000 runs per cell.
struct ExperimentConfig {
    // topology
    std::size_t agents = 60;
    std::size_t legit = 50;
    double radius = 0.2;
    std::uint64_t topology_seed = 7;
    std::size_t max_resamples = 100;
    std::string topology_file;  ///< when set, loaded instead of generated

    // trust regimes, as (mu_legit, mu_malicious) pairs
    std::vector<TrustModel> regimes{TrustModel(0.55, 0.45), TrustModel(0.6, 0.4),
                                    TrustModel(0.65, 0.35), TrustModel(0.7, 0.3)};

    // schedule
    double c = 0.9;
    std::vector<double> gammas{0.005, 0.01, 0.02, 0.05, 0.1, 0.2};

    // runs
    std::size_t horizon = 1000;
    std::size_t runs = 1000;
    std::uint64_t master_seed = 1;
    std::size_t workers = 0;  ///< 0 = hardware concurrency
    /// Share initial states and adversary trajectories across (regime, gamma)
    /// cells for a given run index; trust observations stay cell-specific.
    bool paired = true;
    double epsilon = 0.1;     ///< threshold for exceedance frequencies and bounds

    MaliciousParams malicious;

    std::string output_dir = "out";

    void validate() const {
        if (agents < 2) {
            throw ConfigError("topology.n: need at least 2 agents");
        }
        if (legit == 0 || legit > agents) {
            throw ConfigError("topology.legit: must lie in 1..topology.n");
        }
        if (!(radius >= 0.0)) {
            throw ConfigError("topology.radius: must be non-negative");
        }
        if (regimes.empty()) {
            throw ConfigError("trust.regimes: at least one regime is required");
        }
        for (const auto& r : regimes) {
            r.validate();
        }
        if (!(c > 0.0 && c < 1.0)) {
            throw ConfigError("schedule.c: must lie in (0, 1)");
        }
        if (gammas.empty()) {
            throw ConfigError("schedule.gammas: at least one value is required");
        }
        for (double g : gammas) {
            if (!(g > 0.0)) {
                throw ConfigError("schedule.gammas: values must be positive");
            }
        }
        if (horizon == 0) {
            throw ConfigError("run.horizon: must be positive");
        }
        if (runs == 0) {
            throw ConfigError("run.runs: must be positive");
        }
        if (!(epsilon > 0.0)) {
            throw ConfigError("run.epsilon: must be positive");
        }
        malicious.validate();
    }

    /// Applies one `key = value` assignment. Unknown keys are errors.
    void set(std::string_view key, std::string_view value) {
        const std::string k(key);
        try {
            if (k == "topology.n") {
                agents = parse_integer<std::size_t>(value);
            } else if (k == "topology.legit") {
                legit = parse_integer<std::size_t>(value);
            } else if (k == "topology.radius") {
                radius = parse_double(value);
            } else if (k == "topology.seed") {
                topology_seed = parse_integer<std::uint64_t>(value);
            } else if (k == "topology.max_resamples") {
                max_resamples = parse_integer<std::size_t>(value);
            } else if (k == "topology.file") {
                topology_file = trim(value);
            } else if (k == "trust.regimes") {
                regimes = parse_regimes(value);
            } else if (k == "schedule.c") {
                c = parse_double(value);
            } else if (k == "schedule.gammas") {
                gammas = parse_list(value);
            } else if (k == "run.horizon") {
                horizon = parse_integer<std::size_t>(value);
            } else if (k == "run.runs") {
                runs = parse_integer<std::size_t>(value);
            } else if (k == "run.seed") {
                master_seed = parse_integer<std::uint64_t>(value);
            } else if (k == "run.workers") {
                workers = parse_integer<std::size_t>(value);
            } else if (k == "run.paired") {
                paired = parse_bool(value);
            } else if (k == "run.epsilon") {
                epsilon = parse_double(value);
            } else if (k == "run.eta") {
                malicious.eta = parse_double(value);
            } else if (k == "malicious.amplitude") {
                malicious.amplitude_factor = parse_double(value);
            } else if (k == "malicious.period") {
                malicious.period = parse_double(value);
            } else if (k == "malicious.noise") {
                malicious.noise_stddev = parse_double(value);
            } else if (k == "malicious.mean_factor") {
                malicious.mean_factor = parse_double(value);
            } else if (k == "output.dir") {
                output_dir = trim(value);
            } else {
                throw ConfigError("unknown key");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(k + ": " + e.what());
        }
    }

    /// Applies a `key=value` override string.
    void set_assignment(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
        }
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    std::size_t malicious_count() const noexcept { return agents - legit; }

    static std::string trim(std::string_view s) { return std::string(trustcons::trim(s)); }

    static bool parse_bool(std::string_view value) {
        const std::string v = trim(value);
        if (v == "true" || v == "1" || v == "yes") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no") {
            return false;
        }
        throw ConfigError("not a boolean: '" + v + "'");
    }

    static std::vector<double> parse_list(std::string_view value) {
        std::vector<double> out;
        std::string item;
        std::istringstream is{std::string(value)};
        while (std::getline(is, item, ',')) {
            out.push_back(parse_double(item));
        }
        return out;
    }

    /// "0.55:0.45, 0.7:0.3" -> two regimes.
    static std::vector<TrustModel> parse_regimes(std::string_view value) {
        std::vector<TrustModel> out;
        std::string item;
        std::istringstream is{std::string(value)};
        while (std::getline(is, item, ',')) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("regime '" + trim(item) + "' must be mu_legit:mu_malicious");
            }
            out.emplace_back(parse_double(item.substr(0, colon)),
                             parse_double(item.substr(colon + 1)));
        }
        return out;
    }
};

/// Reads flat `key = value` lines; `#` starts a comment.
inline void apply_config(ExperimentConfig& cfg, std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        if (ExperimentConfig::trim(line).empty()) {
            continue;
        }
        try {
            cfg.set_assignment(line);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open config file '" + path + "'");
    }
    ExperimentConfig cfg;
    try {
        apply_config(cfg, is);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cfg;
}

} // namespace trustcons
