#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "trustcons/analysis.hpp"
#include "trustcons/protocol.hpp"

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

NetworkTopology reference_graph() {
    RggOptions o;
    o.legit_count = 50;
    return generate_rgg(60, 0.2, 7, o);
}

std::vector<std::size_t> legit_degrees(const NetworkTopology& t) {
    std::vector<std::size_t> d;
    for (AgentId i = 0; i < t.legit_count(); ++i) {
        d.push_back(t.legit_neighbor_count(i));
    }
    return d;
}

double spread(std::span<const double> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo;
}

} // namespace

TEST(LambdaSchedule, Values) {
    const LambdaSchedule s(0.9, 0.05);
    EXPECT_EQ(lambda_at(s, 0), 0.9);
    EXPECT_NEAR(lambda_at(s, 20), 0.33109149705429815, 1e-15);
    double prev = 1.0;
    for (std::size_t t = 0; t < 500; ++t) {
        const double l = lambda_at(s, t);
        EXPECT_GT(l, 0.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
    LambdaSchedule inf;
    inf.c = 0.9;
    inf.gamma = std::numeric_limits<double>::infinity();
    EXPECT_EQ(lambda_at(inf, 0), 0.9);
    EXPECT_EQ(lambda_at(inf, 1), 0.0);
    EXPECT_THROW(LambdaSchedule(1.0, 0.1), ConfigError);
    EXPECT_THROW(LambdaSchedule(0.9, 0.0), ConfigError);
}

TEST(NominalWeights, PathOfThree) {
    const auto w = nominal_weights(path3());
    EXPECT_DOUBLE_EQ(w.legit(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(w.legit(0, 1), 0.5);
    EXPECT_EQ(w.legit(0, 2), 0.0);
    for (int j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(w.legit(1, j), 1.0 / 3.0);
    }
}

TEST(NominalWeights, CompleteGraphIsUniform) {
    const auto w = nominal_weights(complete(6));
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            EXPECT_NEAR(w.legit(i, j), 1.0 / 6.0, 1e-15);
        }
    }
}

TEST(NominalWeights, ReferenceGraphRowsFromDegrees) {
    const auto topo = reference_graph();
    const auto w = nominal_weights(topo);
    EXPECT_EQ(w.malicious.rows(), 50);
    EXPECT_EQ(w.malicious.cols(), 10);
    EXPECT_TRUE(w.malicious.isZero(0.0));
    EXPECT_LE(w.max_row_sum_error(), 1e-15);
    const auto deg = legit_degrees(topo);
    for (Eigen::Index i = 0; i < 50; ++i) {
        const double d = static_cast<double>(deg[static_cast<std::size_t>(i)]);
        EXPECT_NEAR(w.legit(i, i), 1.0 - d / (d + 1.0), 1e-15);
    }
}

TEST(Perron, PathOfThree) {
    const auto v = perron_vector(nominal_weights(path3()).legit);
    EXPECT_NEAR(v(0), 2.0 / 7.0, 1e-12);
    EXPECT_NEAR(v(1), 3.0 / 7.0, 1e-12);
    EXPECT_NEAR(v(2), 2.0 / 7.0, 1e-12);
}

TEST(Perron, CompleteGraphIsUniform) {
    const auto v = perron_vector(nominal_weights(complete(5)).legit);
    for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(v(i), 0.2, 1e-12);
    }
}

TEST(Perron, PowerIterationMatchesEigensolveAndDegreeFormula) {
    const auto topo = reference_graph();
    const auto w = nominal_weights(topo).legit;
    const auto v = perron_vector(w);
    const auto eig = oracle::perron_eigen(w);
    const auto deg = oracle::perron_from_degrees(legit_degrees(topo));
    EXPECT_LE((v - eig).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_LE((v - deg).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_NEAR(v.sum(), 1.0, 1e-14);
    EXPECT_GT(v.minCoeff(), 0.0);
}

TEST(Perron, NonConvergenceIsReported) {
    // Bipartite walk on a path: period 2, so power iteration oscillates.
    Eigen::MatrixXd periodic = Eigen::MatrixXd::Zero(3, 3);
    periodic(0, 1) = 1.0;
    periodic(1, 0) = 0.5;
    periodic(1, 2) = 0.5;
    periodic(2, 1) = 1.0;
    PerronOptions o;
    o.max_iterations = 50;
    EXPECT_THROW(perron_vector(periodic, o), NumericalError);
    EXPECT_THROW(perron_vector(Eigen::MatrixXd(2, 3)), ConfigError);
}

TEST(NominalConsensus, Examples) {
    const auto v = perron_vector(nominal_weights(path3()).legit);
    EXPECT_NEAR(nominal_consensus_value(v, Eigen::Vector3d(0.0, 7.0, 0.0)), 3.0, 1e-11);
    EXPECT_NEAR(nominal_consensus_value(v, Eigen::Vector3d::Constant(0.4)), 0.4, 1e-12);
    const auto u = perron_vector(nominal_weights(complete(4)).legit);
    EXPECT_NEAR(nominal_consensus_value(u, Eigen::Vector4d(1.0, 2.0, 3.0, 6.0)), 3.0, 1e-12);
}

TEST(OnlineWeights, AllTrustedUsesFullNeighborhood) {
    const NetworkTopology topo(4, 3, {{0, 1}, {0, 3}, {1, 2}});
    const TrustLedger ledger(topo);
    const auto w = online_weights(ledger, topo);
    EXPECT_DOUBLE_EQ(w.legit(0, 0), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(w.legit(0, 1), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(w.malicious(0, 0), 1.0 / 3.0);
    EXPECT_LE(w.max_row_sum_error(), 1e-15);
    EXPECT_EQ(misclassified_edges(ledger, topo), 1u);
}

TEST(OnlineWeights, NothingTrustedGivesIdentityRow) {
    const NetworkTopology topo(4, 3, {{0, 1}, {0, 3}, {1, 2}});
    TrustLedger ledger(topo);
    ledger.set_beta(0, 1, -0.5);
    ledger.set_beta(0, 3, -0.1);
    const auto w = online_weights(ledger, topo);
    EXPECT_EQ(w.legit(0, 0), 1.0);
    EXPECT_EQ(w.legit.row(0).sum(), 1.0);
    EXPECT_EQ(w.malicious.row(0).sum(), 0.0);
}

TEST(OnlineWeights, CorrectLedgerReproducesNominal) {
    const auto topo = reference_graph();
    TrustLedger ledger(topo);
    for (const auto& e : ledger.edges()) {
        ledger.set_beta(e.observer, e.sender, topo.is_legitimate(e.sender) ? 1.0 : -1.0);
    }
    const auto w = online_weights(ledger, topo);
    const auto nominal = nominal_weights(topo);
    EXPECT_TRUE(w.equals_nominal(nominal));
    EXPECT_EQ(misclassified_edges(ledger, topo), 0u);
}

TEST(OnlineWeights, RowsStochasticWithDiagonalFloor) {
    const auto topo = reference_graph();
    const double floor = 1.0 / static_cast<double>(max_legit_in_degree(topo) + 1);
    TrustLedger ledger(topo);
    StochasticTrust src(TrustModel(0.55, 0.45), 3);
    std::vector<double> obs(ledger.size());
    for (std::size_t t = 0; t < 40; ++t) {
        src.observe(ledger, topo, t, obs);
        ledger.update(std::span<const double>(obs));
        const auto w = online_weights(ledger, topo);
        EXPECT_LE(w.max_row_sum_error(), 1e-15);
        for (Eigen::Index i = 0; i < w.legit.rows(); ++i) {
            EXPECT_GE(w.legit(i, i), floor - 1e-15);
            const std::size_t k = trusted_neighborhood(ledger, topo, static_cast<AgentId>(i)).size();
            const double off = 1.0 / static_cast<double>(k + 1);
            for (Eigen::Index j = 0; j < w.legit.cols(); ++j) {
                if (j != i) {
                    EXPECT_TRUE(w.legit(i, j) == 0.0 || w.legit(i, j) == off);
                }
            }
        }
    }
}

TEST(DecomposeStep, FullAnchoringReturnsInitialState) {
    const auto topo = path3();
    const auto w = nominal_weights(topo);
    const Eigen::Vector3d x0(0.1, 0.5, 0.9);
    auto s = SimulationState::initial(x0, 0);
    s.x_legit = Eigen::Vector3d(0.3, 0.3, 0.3);
    s.contrib_legit = s.x_legit;
    const auto next = decompose_step(s, w, 1.0, x0);
    EXPECT_EQ(next.x_legit, x0);
    EXPECT_EQ(next.round, 1u);
}

TEST(DecomposeStep, NominalStepWithoutMaliciousAgents) {
    const auto topo = complete(4);
    const auto w = nominal_weights(topo);
    const Eigen::Vector4d x0(0.0, 0.2, 0.4, 1.0);
    const auto s = SimulationState::initial(x0, 0);
    const auto next = decompose_step(s, w, 0.0, x0);
    EXPECT_LE((next.x_legit - w.legit * x0).lpNorm<Eigen::Infinity>(), 1e-15);
    EXPECT_TRUE(next.contrib_malicious.isZero(0.0));
}

TEST(DecomposeStep, SplitMatchesDirectUpdate) {
    Rng rng(12);
    const int L = 6, M = 3;
    for (int trial = 0; trial < 50; ++trial) {
        WeightMatrix w{Eigen::MatrixXd(L, L), Eigen::MatrixXd(L, M), 0};
        for (int i = 0; i < L; ++i) {
            for (int j = 0; j < L; ++j) w.legit(i, j) = rng.uniform01();
            for (int j = 0; j < M; ++j) w.malicious(i, j) = rng.uniform01();
            const double s = w.legit.row(i).sum() + w.malicious.row(i).sum();
            w.legit.row(i) /= s;
            w.malicious.row(i) /= s;
        }
        Eigen::VectorXd x0(L), xm(M);
        for (int i = 0; i < L; ++i) x0(i) = rng.uniform(-1.0, 1.0);
        for (int j = 0; j < M; ++j) xm(j) = rng.uniform(-1.0, 1.0);
        auto s = SimulationState::initial(x0, M);
        for (int t = 0; t < 30; ++t) {
            s.x_malicious = xm;
            const double lam = rng.uniform01();
            const Eigen::VectorXd direct =
                lam * x0 + (1.0 - lam) * (w.legit * s.x_legit + w.malicious * xm);
            s = decompose_step(s, w, lam, x0);
            EXPECT_LE((s.x_legit - direct).lpNorm<Eigen::Infinity>(), 1e-15);
            EXPECT_LE(s.decomposition_error(), 1e-12);
        }
    }
}

TEST(DecomposeStep, ArgumentErrors) {
    const auto w = nominal_weights(path3());
    const Eigen::Vector3d x0(0.1, 0.2, 0.3);
    const auto s = SimulationState::initial(x0, 0);
    EXPECT_THROW(decompose_step(s, w, 1.5, x0), DomainError);
    EXPECT_THROW(decompose_step(s, w, -0.1, x0), DomainError);
    EXPECT_THROW(decompose_step(s, w, 0.5, Eigen::Vector2d(0.0, 0.0)), ConfigError);
}

TEST(Adversary, DegenerateOscillationIsConstant) {
    MaliciousParams p;
    p.amplitude_factor = 0.0;
    p.noise_stddev = 0.0;
    OscillatingAdversary adv(0.3, 4, p, 1);
    for (std::size_t t = 0; t < 100; ++t) {
        const auto x = adv.states(t);
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            EXPECT_EQ(x(j), 0.6);
        }
    }
}

TEST(Adversary, SampleMeanNearTwiceNominal) {
    // Keeps 2x* + A + several sigma inside the clamp.
    const double xs = 0.3;
    OscillatingAdversary adv(xs, 3, MaliciousParams{}, 99);
    const int rounds = 10000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    for (int t = 0; t < rounds; ++t) {
        sum += adv.states(static_cast<std::size_t>(t));
    }
    for (Eigen::Index j = 0; j < 3; ++j) {
        EXPECT_NEAR(sum(j) / rounds, 2.0 * xs, 3.0 * 0.05 / std::sqrt(rounds));
    }
}

TEST(Adversary, OutputsClampedToStateBound) {
    MaliciousParams p;
    p.noise_stddev = 2.0;
    OscillatingAdversary adv(0.45, 5, p, 4);
    for (std::size_t t = 0; t < 500; ++t) {
        const auto x = adv.states(t);
        EXPECT_LE(x.cwiseAbs().maxCoeff(), p.eta);
    }
}

TEST(RunProtocol, NominalReductionReachesWeightedAverage) {
    RggOptions o;
    o.legit_count = 50;
    const auto topo = generate_rgg(50, 0.2, 7, o);
    const auto nominal = make_nominal(topo);
    auto trust = perfect_trust(topo);
    const auto x0 = draw_initial_state(50, 1.0, 5);
    OscillatingAdversary adv(0.0, 0, MaliciousParams{}, 1);
    const auto trace =
        run_protocol(topo, nominal, trust, LambdaSchedule(0.9, 1.0), x0, 1500, adv);
    // |lambda_2| of this graph's nominal matrix is about 0.9866, so the spread
    // only falls by roughly e^-13 per 1000 rounds.
    EXPECT_LT(spread(trace.state_at(1000)), 1e-6);
    const auto xT = trace.state_at(1500);
    EXPECT_LT(spread(xT), 1e-8);
    EXPECT_NEAR(xT[0], nominal_consensus_value(nominal.perron, x0), 1e-6);
    EXPECT_EQ(empirical_recovery_time(trace), std::optional<std::size_t>(0));
    const auto m = deviation_metrics(trace, trace.x_nominal);
    for (double b : m.malicious) {
        EXPECT_EQ(b, 0.0);
    }
}

TEST(RunProtocol, ConsensusUnderAttackWithModerateDecay) {
    const auto topo = reference_graph();
    const auto nominal = make_nominal(topo);
    RunSpec spec;
    spec.trust = TrustModel(0.7, 0.3);
    spec.schedule = LambdaSchedule(0.9, 0.05);
    spec.horizon = 1000;
    spec.seed = 21;
    const auto trace = run_protocol(topo, nominal, spec);
    EXPECT_LT(spread(trace.state_at(1000)), 1e-6);
    const auto tf = empirical_recovery_time(trace);
    ASSERT_TRUE(tf.has_value());
    // After recovery the spread never grows.
    double prev = spread(trace.state_at(*tf + 1));
    for (std::size_t k = *tf + 2; k <= 1000; ++k) {
        const double s = spread(trace.state_at(k));
        EXPECT_LE(s, prev * (1.0 + 1e-12) + 1e-15) << k;
        prev = s;
    }
}

TEST(RunProtocol, MatchesPlainLoopSimulation) {
    RggOptions o;
    o.legit_count = 16;
    const auto topo = generate_rgg(20, 0.35, 8, o);
    const auto nominal = make_nominal(topo);
    const std::size_t L = 16, n = 20, T = 150;
    auto obs = [](std::size_t t, std::size_t i, std::size_t j) {
        // Deterministic pseudo-random scores with mixed signs early on.
        const double u = std::fmod(std::sin(1.0 + 12.9898 * t + 78.233 * i + 37.719 * j) * 43758.5453, 1.0);
        const double a = std::abs(u);
        return j < 16 ? 0.3 + 0.6 * a : 0.1 + 0.6 * a;
    };
    ScriptedTrust trust([&](const DirectedEdge& e, std::size_t t) { return obs(t, e.observer, e.sender); });
    MaliciousParams p;
    const auto x0 = draw_initial_state(L, 1.0, 3);
    OscillatingAdversary adv(nominal_consensus_value(nominal.perron, x0), 4, p, 17);
    OscillatingAdversary adv_copy(nominal_consensus_value(nominal.perron, x0), 4, p, 17);
    const auto trace = run_protocol(topo, nominal, trust, LambdaSchedule(0.9, 0.05), x0, T, adv);

    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = topo.neighbors(i);
    }
    const std::vector<double> x0v(x0.data(), x0.data() + x0.size());
    const auto direct = oracle::simulate_direct(
        n, L, nbrs, x0v, 0.9, 0.05, T, obs, [&](std::size_t t) {
            const auto v = adv_copy.states(t);
            return std::vector<double>(v.data(), v.data() + v.size());
        });
    for (std::size_t k = 0; k <= T; ++k) {
        const auto x = trace.state_at(k);
        for (std::size_t i = 0; i < L; ++i) {
            EXPECT_NEAR(x[i], direct[k][i], 1e-12) << "round " << k << " agent " << i;
        }
    }
}

TEST(RunProtocol, BitReproducibleForFixedSeed) {
    const auto topo = reference_graph();
    const auto nominal = make_nominal(topo);
    RunSpec spec;
    spec.trust = TrustModel(0.6, 0.4);
    spec.horizon = 300;
    spec.seed = 1234;
    const auto a = run_protocol(topo, nominal, spec);
    const auto b = run_protocol(topo, nominal, spec);
    EXPECT_EQ(a.x_legit, b.x_legit);
    EXPECT_EQ(a.contrib_malicious, b.contrib_malicious);
    EXPECT_EQ(a.ledger_hash, b.ledger_hash);
    spec.seed = 1235;
    const auto c = run_protocol(topo, nominal, spec);
    EXPECT_NE(a.x_legit, c.x_legit);
}

TEST(RunProtocol, EnvironmentSeedSharesInitialStateAndAttack) {
    const auto topo = reference_graph();
    const auto nominal = make_nominal(topo);
    RunSpec a;
    a.trust = TrustModel(0.6, 0.4);
    a.horizon = 5;
    a.seed = 1;
    a.environment_seed = 500;
    RunSpec b = a;
    b.seed = 2;
    b.trust = TrustModel(0.7, 0.3);
    const auto ta = run_protocol(topo, nominal, a);
    const auto tb = run_protocol(topo, nominal, b);
    EXPECT_EQ(ta.x_nominal, tb.x_nominal);
    const auto sa = ta.state_at(0);
    const auto sb = tb.state_at(0);
    EXPECT_TRUE(std::equal(sa.begin(), sa.end(), sb.begin()));
    EXPECT_NE(ta.ledger_hash, tb.ledger_hash);
}

TEST(RunProtocol, DecompositionExactEveryRound) {
    const auto topo = reference_graph();
    const auto nominal = make_nominal(topo);
    RunSpec spec;
    spec.trust = TrustModel(0.55, 0.45);
    spec.horizon = 500;
    spec.seed = 77;
    const auto trace = run_protocol(topo, nominal, spec);
    EXPECT_LE(trace.max_decomposition_error, 1e-12);
    for (double e : trace.max_row_sum_error) {
        EXPECT_LE(e, 1e-15);
    }
    for (double x : trace.x_legit) {
        EXPECT_LE(std::abs(x), spec.malicious.eta);
    }
}

TEST(RunProtocol, PerfectTrustIgnoresMaliciousNeighbors) {
    // Agent 0 hears only from malicious agents besides agent 1.
    const NetworkTopology topo(6, 3, {{0, 1}, {1, 2}, {0, 3}, {0, 4}, {0, 5}, {2, 5}});
    const auto nominal = make_nominal(topo);
    auto trust = perfect_trust(topo);
    const auto x0 = draw_initial_state(3, 1.0, 8);
    OscillatingAdversary adv(nominal_consensus_value(nominal.perron, x0), 3, MaliciousParams{}, 2);
    std::vector<bool> mal_zero;
    const auto trace = run_protocol(
        topo, nominal, trust, LambdaSchedule(0.9, 0.5), x0, 300, adv,
        [&](std::size_t, const TrustLedger&, const WeightMatrix& w, const SimulationState&) {
            mal_zero.push_back(w.malicious.isZero(0.0));
        });
    const auto tf = empirical_recovery_time(trace);
    ASSERT_EQ(tf, std::optional<std::size_t>(0));
    for (bool z : mal_zero) {
        EXPECT_TRUE(z);
    }
    EXPECT_LT(spread(trace.state_at(300)), 1e-8);
    EXPECT_NEAR(trace.state_at(300)[0], trace.x_nominal, 1e-8);
}

TEST(RunProtocol, LargerConfidenceKeepsFirstStepCloserToStart) {
    const auto topo = reference_graph();
    const auto nominal = make_nominal(topo);
    auto first_step_gap = [&](double c) {
        RunSpec spec;
        spec.trust = TrustModel(0.6, 0.4);
        spec.schedule = LambdaSchedule(c, 0.05);
        spec.horizon = 1;
        spec.seed = 3;
        const auto tr = run_protocol(topo, nominal, spec);
        double gap = 0.0;
        for (std::size_t i = 0; i < tr.legit_count; ++i) {
            gap = std::max(gap, std::abs(tr.state_at(1)[i] - tr.state_at(0)[i]));
        }
        return gap;
    };
    EXPECT_LT(first_step_gap(0.9), first_step_gap(0.5));
    EXPECT_LT(first_step_gap(0.5), first_step_gap(0.1));
}

TEST(RunProtocol, ScriptedLateRecoveryTime) {
    // Edge 0 <- 1 looks malicious for rounds 0..9 (beta(9) = -0.5), then a
    // perfect score at round 10 brings the aggregate back to 0, which is trusted.
    const NetworkTopology topo(3, 3, {{0, 1}, {1, 2}});
    const auto nominal = make_nominal(topo);
    ScriptedTrust trust([](const DirectedEdge& e, std::size_t t) {
        if (e.observer == 0 && e.sender == 1) {
            return t < 10 ? 0.45 : 1.0;
        }
        return 1.0;
    });
    OscillatingAdversary adv(0.0, 0, MaliciousParams{}, 1);
    const auto x0 = draw_initial_state(3, 1.0, 1);
    std::vector<double> betas;
    const auto trace = run_protocol(
        topo, nominal, trust, LambdaSchedule(0.9, 0.1), x0, 40, adv,
        [&](std::size_t, const TrustLedger& l, const WeightMatrix&, const SimulationState&) {
            betas.push_back(l.beta(0, 1));
        });
    EXPECT_NEAR(betas[9], -0.5, 1e-12);
    EXPECT_NEAR(betas[10], 0.0, 1e-12);
    EXPECT_GE(betas[10], 0.0);
    EXPECT_EQ(empirical_recovery_time(trace), std::optional<std::size_t>(10));
}

TEST(RunProtocol, DimensionChecks) {
    const auto topo = path3();
    const auto nominal = make_nominal(topo);
    auto trust = perfect_trust(topo);
    OscillatingAdversary adv(0.0, 0, MaliciousParams{}, 1);
    OscillatingAdversary wrong(0.0, 2, MaliciousParams{}, 1);
    EXPECT_THROW(run_protocol(topo, nominal, trust, LambdaSchedule(0.9, 0.1),
                              Eigen::Vector2d(0.0, 1.0), 5, adv),
                 ConfigError);
    EXPECT_THROW(run_protocol(topo, nominal, trust, LambdaSchedule(0.9, 0.1),
                              Eigen::Vector3d(0.0, 1.0, 0.5), 5, wrong),
                 ConfigError);
}
