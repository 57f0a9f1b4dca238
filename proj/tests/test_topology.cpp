#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "trustcons/topology.hpp"

using namespace trustcons;

namespace {

NetworkTopology path3() { return NetworkTopology(3, 3, {{0, 1}, {1, 2}}); }

NetworkTopology complete(std::size_t k) {
    std::vector<std::pair<AgentId, AgentId>> e;
    for (AgentId i = 0; i < k; ++i) {
        for (AgentId j = i + 1; j < k; ++j) {
            e.emplace_back(i, j);
        }
    }
    return NetworkTopology(k, k, e);
}

RggOptions legit(std::size_t l) {
    RggOptions o;
    o.legit_count = l;
    return o;
}

} // namespace

TEST(Topology, AdjacencyIsSymmetricAndSorted) {
    const NetworkTopology t(4, 3, {{2, 0}, {0, 1}, {3, 1}, {1, 0}});
    EXPECT_EQ(t.edge_count(), 3u);
    for (AgentId i = 0; i < t.size(); ++i) {
        const auto& n = t.neighbors(i);
        EXPECT_TRUE(std::is_sorted(n.begin(), n.end()));
        for (AgentId j : n) {
            EXPECT_NE(i, j);
            EXPECT_TRUE(t.has_edge(j, i));
        }
    }
    EXPECT_EQ(t.malicious_count(), 1u);
    EXPECT_TRUE(t.is_legitimate(2));
    EXPECT_EQ(t.kind(3), AgentKind::malicious);
    EXPECT_EQ(t.legit_neighbor_count(1), 1u);
}

TEST(Topology, RejectsMalformedEdgeLists) {
    EXPECT_THROW(NetworkTopology(3, 3, {{1, 1}}), ConfigError);
    EXPECT_THROW(NetworkTopology(3, 3, {{0, 3}}), ConfigError);
    EXPECT_THROW(NetworkTopology(3, 4, {}), ConfigError);
}

TEST(Topology, TwoAgentsWithRadiusBeyondDiagonalAreAdjacent) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        const auto t = generate_rgg(2, 1.5, seed);
        EXPECT_EQ(t.edge_count(), 1u);
        EXPECT_TRUE(t.has_edge(0, 1));
    }
}

TEST(Topology, ZeroRadiusFailsAfterRetries) {
    try {
        generate_rgg(3, 0.0, 11);
        FAIL() << "expected GenerationFailure";
    } catch (const GenerationFailure& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("seed 11"), std::string::npos);
        EXPECT_NE(msg.find("radius 0"), std::string::npos);
        EXPECT_EQ(e.code(), ExitCode::numerical);
    }
}

TEST(Topology, GeneratorArgumentErrors) {
    EXPECT_THROW(generate_rgg(1, 0.5, 1), ConfigError);
    EXPECT_THROW(generate_rgg(5, -0.1, 1), ConfigError);
    EXPECT_THROW(generate_rgg(5, std::nan(""), 1), ConfigError);
    EXPECT_THROW(generate_rgg(5, 0.5, 1, legit(6)), ConfigError);
}

TEST(Topology, ReferenceGraphMatchesBruteForceDistances) {
    const auto t = generate_rgg(60, 0.2, 7, legit(50));
    ASSERT_TRUE(t.positions.has_value());
    const auto& p = *t.positions;
    ASSERT_EQ(p.size(), 60u);
    std::vector<std::pair<std::size_t, std::size_t>> expected;
    std::vector<std::pair<std::size_t, std::size_t>> legit_edges;
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_GE(p[i].x, 0.0);
        EXPECT_LT(p[i].x, 1.0);
        for (std::size_t j = i + 1; j < 60; ++j) {
            if (std::hypot(p[i].x - p[j].x, p[i].y - p[j].y) <= 0.2 + 1e-15) {
                expected.emplace_back(i, j);
                if (j < 50) {
                    legit_edges.emplace_back(i, j);
                }
            }
        }
    }
    EXPECT_EQ(t.edges(), expected);
    EXPECT_TRUE(oracle::connected(50, legit_edges));
    EXPECT_TRUE(t.legit_subgraph_connected());
    EXPECT_EQ(t.seed, 7u);

    const auto again = generate_rgg(60, 0.2, 7, legit(50));
    EXPECT_EQ(again.edges(), t.edges());
    EXPECT_EQ(again.resample_count, t.resample_count);
}

TEST(Topology, GeneratedGraphsAreWellFormedAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto t = generate_rgg(30, 0.3, seed, legit(25));
        EXPECT_TRUE(t.legit_subgraph_connected()) << seed;
        for (AgentId i = 0; i < t.size(); ++i) {
            for (AgentId j : t.neighbors(i)) {
                EXPECT_NE(i, j);
                EXPECT_TRUE(t.has_edge(j, i));
            }
        }
    }
}

TEST(Topology, MeanDegreeNearAreaEstimate) {
    const double expected = 60.0 * std::numbers::pi * 0.2 * 0.2;
    double total = 0.0;
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
        const auto t = generate_rgg(60, 0.2, static_cast<std::uint64_t>(1000 + s), legit(50));
        total += 2.0 * static_cast<double>(t.edge_count()) / 60.0;
    }
    const double mean = total / seeds;
    EXPECT_NEAR(mean, expected, 0.25 * expected);
}

TEST(Topology, MaxLegitNeighborhood) {
    EXPECT_EQ(max_legit_in_degree(path3()), 2u);
    EXPECT_EQ(max_legit_in_degree(complete(5)), 4u);

    const auto t = generate_rgg(60, 0.2, 7, legit(50));
    std::vector<std::size_t> deg(60, 0);
    for (auto [i, j] : t.edges()) {
        ++deg[i];
        ++deg[j];
    }
    const std::size_t scan = *std::max_element(deg.begin(), deg.begin() + 50);
    EXPECT_EQ(max_legit_in_degree(t), scan);
}

TEST(Topology, TextRoundTrip) {
    const auto t = generate_rgg(12, 0.5, 3, legit(9));
    std::stringstream ss;
    write_topology(ss, t);
    const auto back = read_topology(ss);
    EXPECT_EQ(back.size(), t.size());
    EXPECT_EQ(back.legit_count(), t.legit_count());
    EXPECT_EQ(back.edges(), t.edges());
    EXPECT_EQ(back.seed, t.seed);
    EXPECT_EQ(back.radius, t.radius);
    ASSERT_TRUE(back.positions.has_value());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ((*back.positions)[i].x, (*t.positions)[i].x);
        EXPECT_EQ((*back.positions)[i].y, (*t.positions)[i].y);
    }
}

TEST(Topology, TextFormatErrors) {
    std::istringstream bad_tag("# trustcons topology v1\nN 2\nL 2\nX 1\n");
    EXPECT_THROW(read_topology(bad_tag), ConfigError);
    std::istringstream missing("# trustcons topology v1\nE 0 1\n");
    EXPECT_THROW(read_topology(missing), ConfigError);
    EXPECT_THROW(load_topology("/nonexistent/dir/topology.txt"), IoError);
}

TEST(Topology, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "trustcons_topology_test.txt";
    const auto t = generate_rgg(10, 0.6, 5);
    save_topology(path.string(), t);
    const auto back = load_topology(path.string());
    EXPECT_EQ(back.edges(), t.edges());
    std::filesystem::remove(path);
}
