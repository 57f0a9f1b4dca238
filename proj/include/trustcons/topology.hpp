#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/rng.hpp"

namespace trustcons {

using AgentId = std::size_t;

enum class AgentKind { legitimate, malicious };

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Fixed communication graph with the legitimate/malicious partition.
///
/// Agents are indexed 0..N-1; indices below `legit_count()` are legitimate,
/// the rest malicious. Adjacency is stored symmetric, but queries are phrased
/// directionally: `neighbors(i)` lists the agents that can transmit to `i`.
class NetworkTopology {
public:
    NetworkTopology() = default;

    /// Builds from an undirected edge list. Each pair is inserted in both directions.
    NetworkTopology(std::size_t n_agents, std::size_t legit_count,
                    const std::vector<std::pair<AgentId, AgentId>>& edges)
        : legit_count_(legit_count), adjacency_(n_agents) {
        if (legit_count > n_agents) {
            throw ConfigError("legitimate count " + std::to_string(legit_count) +
                              " exceeds agent count " + std::to_string(n_agents));
        }
        for (const auto& [i, j] : edges) {
            if (i >= n_agents || j >= n_agents) {
                throw ConfigError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") references an agent outside 0.." +
                                  std::to_string(n_agents - 1));
            }
            if (i == j) {
                throw ConfigError("self-loop on agent " + std::to_string(i));
            }
            adjacency_[i].push_back(j);
            adjacency_[j].push_back(i);
        }
        for (auto& nbrs : adjacency_) {
            std::sort(nbrs.begin(), nbrs.end());
            nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
        }
    }

    std::size_t size() const noexcept { return adjacency_.size(); }
    std::size_t legit_count() const noexcept { return legit_count_; }
    std::size_t malicious_count() const noexcept { return size() - legit_count_; }

    bool is_legitimate(AgentId i) const noexcept { return i < legit_count_; }
    AgentKind kind(AgentId i) const noexcept {
        return is_legitimate(i) ? AgentKind::legitimate : AgentKind::malicious;
    }

    /// Agents that can transmit to `i`, sorted ascending.
    const std::vector<AgentId>& neighbors(AgentId i) const { return adjacency_.at(i); }

    bool has_edge(AgentId i, AgentId j) const {
        const auto& nbrs = adjacency_.at(i);
        return std::binary_search(nbrs.begin(), nbrs.end(), j);
    }

    std::size_t legit_neighbor_count(AgentId i) const {
        const auto& nbrs = adjacency_.at(i);
        return static_cast<std::size_t>(
            std::count_if(nbrs.begin(), nbrs.end(), [&](AgentId j) { return is_legitimate(j); }));
    }

    /// Undirected edges with i < j.
    std::vector<std::pair<AgentId, AgentId>> edges() const {
        std::vector<std::pair<AgentId, AgentId>> out;
        for (AgentId i = 0; i < size(); ++i) {
            for (AgentId j : adjacency_[i]) {
                if (i < j) {
                    out.emplace_back(i, j);
                }
            }
        }
        return out;
    }

    std::size_t edge_count() const {
        std::size_t twice = 0;
        for (const auto& nbrs : adjacency_) {
            twice += nbrs.size();
        }
        return twice / 2;
    }

    /// True when the subgraph induced by the legitimate agents is connected.
    bool legit_subgraph_connected() const {
        if (legit_count_ <= 1) {
            return true;
        }
        std::vector<bool> seen(legit_count_, false);
        std::queue<AgentId> frontier;
        frontier.push(0);
        seen[0] = true;
        std::size_t reached = 1;
        while (!frontier.empty()) {
            const AgentId u = frontier.front();
            frontier.pop();
            for (AgentId w : adjacency_[u]) {
                if (is_legitimate(w) && !seen[w]) {
                    seen[w] = true;
                    ++reached;
                    frontier.push(w);
                }
            }
        }
        return reached == legit_count_;
    }

    // Generation provenance; kept so exported topologies are replayable.
    std::optional<std::vector<Point2>> positions;
    std::uint64_t seed = 0;
    double radius = 0.0;
    std::size_t resample_count = 0;

private:
    std::size_t legit_count_ = 0;
    std::vector<std::vector<AgentId>> adjacency_;
};

/// d_M: the largest neighborhood size over legitimate agents.
inline std::size_t max_legit_in_degree(const NetworkTopology& topo) {
    std::size_t best = 0;
    for (AgentId i = 0; i < topo.legit_count(); ++i) {
        best = std::max(best, topo.neighbors(i).size());
    }
    return best;
}

struct RggOptions {
    /// Number of legitimate agents; defaults to all agents when unset.
    std::optional<std::size_t> legit_count;
    std::size_t max_resamples = 100;
};

/// Random geometric graph on the unit square: positions uniform, edge iff the
/// Euclidean distance is at most `radius`. Positions are redrawn until the
/// legitimate-induced subgraph is connected, at most `max_resamples` times.
inline NetworkTopology generate_rgg(std::size_t n, double radius, std::uint64_t seed,
                                    const RggOptions& options = {}) {
    if (n < 2) {
        throw ConfigError("random geometric graph needs at least 2 agents, got " +
                          std::to_string(n));
    }
    if (!(radius >= 0.0) || !std::isfinite(radius)) {
        throw ConfigError("radius must be a finite non-negative length, got " +
                          format_double(radius));
    }
    const std::size_t legit = options.legit_count.value_or(n);
    if (legit == 0 || legit > n) {
        throw ConfigError("legitimate count must be in 1.." + std::to_string(n));
    }

    Rng rng(seed);
    const double r2 = radius * radius;
    for (std::size_t attempt = 0; attempt <= options.max_resamples; ++attempt) {
        std::vector<Point2> pts(n);
        for (auto& p : pts) {
            p.x = rng.uniform01();
            p.y = rng.uniform01();
        }
        std::vector<std::pair<AgentId, AgentId>> edges;
        for (AgentId i = 0; i < n; ++i) {
            for (AgentId j = i + 1; j < n; ++j) {
                const double dx = pts[i].x - pts[j].x;
                const double dy = pts[i].y - pts[j].y;
                if (dx * dx + dy * dy <= r2) {
                    edges.emplace_back(i, j);
                }
            }
        }
        NetworkTopology topo(n, legit, edges);
        if (topo.legit_subgraph_connected()) {
            topo.positions = std::move(pts);
            topo.seed = seed;
            topo.radius = radius;
            topo.resample_count = attempt;
            return topo;
        }
    }
    throw GenerationFailure("random geometric graph with seed " + std::to_string(seed) +
                            " and radius " + format_double(radius) +
                            " has a disconnected legitimate subgraph after " +
                            std::to_string(options.max_resamples) + " resamples");
}

// Edge-list text format:
//
//   # trustcons topology v1
//   N <agents>
//   L <legitimate>
//   M <malicious>
//   seed <u64>
//   radius <real>
//   resamples <count>
//   P <agent> <x> <y>      (optional, one per agent)
//   E <i> <j>              (one per undirected edge, i < j)

inline void write_topology(std::ostream& os, const NetworkTopology& topo) {
    std::string out = "# trustcons topology v1\n";
    out += "N " + std::to_string(topo.size()) + "\n";
    out += "L " + std::to_string(topo.legit_count()) + "\n";
    out += "M " + std::to_string(topo.malicious_count()) + "\n";
    out += "seed " + std::to_string(topo.seed) + "\n";
    out += "radius " + format_double(topo.radius) + "\n";
    out += "resamples " + std::to_string(topo.resample_count) + "\n";
    if (topo.positions) {
        for (AgentId i = 0; i < topo.positions->size(); ++i) {
            const auto& p = (*topo.positions)[i];
            out += "P " + std::to_string(i) + " " + format_double(p.x) + " " +
                   format_double(p.y) + "\n";
        }
    }
    for (const auto& [i, j] : topo.edges()) {
        out += "E " + std::to_string(i) + " " + std::to_string(j) + "\n";
    }
    os << out;
}

inline NetworkTopology read_topology(std::istream& is) {
    std::optional<std::size_t> n, legit, malicious;
    std::uint64_t seed = 0;
    double radius = 0.0;
    std::size_t resamples = 0;
    std::vector<std::pair<AgentId, AgentId>> edges;
    std::vector<std::pair<AgentId, Point2>> points;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        std::vector<std::string> fields;
        for (std::string f; ls >> f;) {
            fields.push_back(f);
        }
        auto need = [&](std::size_t k) {
            if (fields.size() != k) {
                throw ConfigError("topology line " + std::to_string(lineno) + ": '" + tag +
                                  "' expects " + std::to_string(k) + " field(s)");
            }
        };
        if (tag == "N") {
            need(1);
            n = parse_integer<std::size_t>(fields[0]);
        } else if (tag == "L") {
            need(1);
            legit = parse_integer<std::size_t>(fields[0]);
        } else if (tag == "M") {
            need(1);
            malicious = parse_integer<std::size_t>(fields[0]);
        } else if (tag == "seed") {
            need(1);
            seed = parse_integer<std::uint64_t>(fields[0]);
        } else if (tag == "radius") {
            need(1);
            radius = parse_double(fields[0]);
        } else if (tag == "resamples") {
            need(1);
            resamples = parse_integer<std::size_t>(fields[0]);
        } else if (tag == "P") {
            need(3);
            points.emplace_back(parse_integer<AgentId>(fields[0]),
                                Point2{parse_double(fields[1]), parse_double(fields[2])});
        } else if (tag == "E") {
            need(2);
            edges.emplace_back(parse_integer<AgentId>(fields[0]),
                               parse_integer<AgentId>(fields[1]));
        } else {
            throw ConfigError("topology line " + std::to_string(lineno) + ": unknown tag '" +
                              tag + "'");
        }
    }
    if (!n || !legit) {
        throw ConfigError("topology header must declare N and L");
    }
    if (malicious && *n != *legit + *malicious) {
        throw ConfigError("topology header: N != L + M");
    }
    NetworkTopology topo(*n, *legit, edges);
    topo.seed = seed;
    topo.radius = radius;
    topo.resample_count = resamples;
    if (!points.empty()) {
        if (points.size() != *n) {
            throw ConfigError("topology lists positions for " + std::to_string(points.size()) +
                              " of " + std::to_string(*n) + " agents");
        }
        std::vector<Point2> pts(*n);
        for (const auto& [i, p] : points) {
            if (i >= *n) {
                throw ConfigError("position for unknown agent " + std::to_string(i));
            }
            pts[i] = p;
        }
        topo.positions = std::move(pts);
    }
    return topo;
}

inline void save_topology(const std::string& path, const NetworkTopology& topo) {
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    write_topology(os, topo);
    if (!os) {
        throw IoError("write to '" + path + "' failed");
    }
}

inline NetworkTopology load_topology(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open topology file '" + path + "'");
    }
    return read_topology(is);
}

} // namespace trustcons
