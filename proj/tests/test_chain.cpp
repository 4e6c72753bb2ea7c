#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "augkern/chain.hpp"
#include "support.hpp"

using namespace augkern;
namespace ts = testing_support;

TEST(Transition, TwoStateSwap) {
    Eigen::Matrix2d want;
    want << 0.5, 0.5, 1.0, 0.0;
    EXPECT_LE((transition_matrix(ts::two_state_chain()) - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Transition, VanishingRateIsPureRetraction) {
    const auto spec = ts::two_state_chain(1e-12);
    Eigen::MatrixXd want(2, 2);
    want << 1, 0, 1, 0;
    EXPECT_LE((transition_matrix(spec) - want).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((stationary_distribution(spec).probs - spec.rho()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Transition, MatchesEntrywiseOracleAndIsStochastic) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto spec = ts::random_symmetric_spec(seed, 60);
        const auto r = transition_matrix(spec);
        EXPECT_LE((r - ts::oracle_transition(spec)).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LE((r.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
        EXPECT_GE(r.minCoeff(), 0.0);
    }
}

TEST(ChainSpec, RejectsInvalidInputs) {
    auto space = ts::two_state_space();
    const AugmentationMatrix swap(space, ts::swap2());
    EXPECT_THROW(ChainSpec(space, {{swap, 0.0}}, {{0, 1.0}}), InvalidArgument);
    EXPECT_THROW(ChainSpec(space, {{swap, -1.0}}, {{0, 1.0}}), InvalidArgument);
    EXPECT_THROW(ChainSpec(space, {{swap, 1.0}}, {{0, 0.7}}), InvalidArgument);
    EXPECT_THROW(ChainSpec(space, {{swap, 1.0}}, {{2, 1.0}}), InvalidArgument);
    EXPECT_THROW(ChainSpec(space, {}, {{0, 1.0}}), InvalidArgument);
    EXPECT_THROW(ChainSpec(space, {{AugmentationMatrix(ts::line_space(3), Eigen::MatrixXd::Identity(3, 3)), 1.0}},
                           {{0, 1.0}}),
                 InvalidArgument);
}

TEST(Stationary, TwoStateSwap) {
    const auto pi = stationary_distribution(ts::two_state_chain());
    EXPECT_NEAR(pi[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(pi[1], 1.0 / 3.0, 1e-15);
}

TEST(Stationary, FixedPointAndPowerIterationOracle) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto spec = ts::random_symmetric_spec(seed);
        const auto pi = stationary_distribution(spec).probs;
        const auto r = transition_matrix(spec);
        EXPECT_LT((r.transpose() * pi - pi).lpNorm<Eigen::Infinity>(), 1e-10) << "seed " << seed;
        EXPECT_NEAR(pi.sum(), 1.0, 1e-10);
        EXPECT_LT((pi - ts::power_iteration(r)).lpNorm<Eigen::Infinity>(), 1e-8) << "seed " << seed;
    }
}

TEST(Stationary, ResolventRowsSumToOne) {
    for (std::uint64_t seed = 200; seed < 210; ++seed) {
        const auto spec = ts::random_symmetric_spec(seed, 80);
        const Eigen::MatrixXd inv = resolvent_operator(spec).inverse();
        EXPECT_LT((inv.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-10);
    }
}

TEST(Stationary, ApproachesRetractionAsRatesShrink) {
    for (std::uint64_t seed = 300; seed < 305; ++seed) {
        const auto spec = ts::random_symmetric_spec(seed, 50);
        double prev = std::numeric_limits<double>::infinity();
        for (double f : {1.0, 1e-1, 1e-2, 1e-3}) {
            const auto s = spec.scaled_rates(f);
            const double d = (stationary_distribution(s).probs - s.rho()).lpNorm<1>();
            EXPECT_LT(d, prev);
            prev = d;
        }
    }
}

TEST(FiniteTime, TwoStateExamples) {
    const auto spec = ts::two_state_chain();
    EXPECT_EQ(finite_time_distribution(spec, 0).probs, spec.rho());
    const auto p1 = finite_time_distribution(spec, 1);
    EXPECT_NEAR(p1[0], 0.5, 1e-15);
    EXPECT_NEAR(p1[1], 0.5, 1e-15);
    const auto pi = stationary_distribution(spec).probs;
    EXPECT_LE((finite_time_distribution(spec, 50).probs - pi).norm(), mixing_bound(1.0, 50));
}

TEST(FiniteTime, RecurrenceAndMixingBound) {
    for (std::uint64_t seed = 400; seed < 410; ++seed) {
        const auto spec = ts::random_symmetric_spec(seed, 60);
        const Eigen::MatrixXd rt = transition_matrix(spec).transpose();
        const auto pi = stationary_distribution(spec).probs;
        Eigen::VectorXd prev = finite_time_distribution(spec, 0).probs;
        for (std::size_t n = 0; n <= 100; ++n) {
            const auto cur = finite_time_distribution(spec, n).probs;
            if (n > 0) EXPECT_LT((rt * prev - cur).lpNorm<Eigen::Infinity>(), 1e-10);
            EXPECT_LE((cur - pi).norm(), mixing_bound(spec.beta(), n) + 1e-12);
            prev = cur;
        }
    }
}

TEST(MixingBound, Values) {
    EXPECT_DOUBLE_EQ(mixing_bound(1.0, 0), 1.25);
    EXPECT_DOUBLE_EQ(mixing_bound(1.0, 1), 0.625);
    EXPECT_LT(mixing_bound(3.0, 2000), 1e-200);
    EXPECT_THROW(mixing_bound(0.0, 1), InvalidArgument);
    for (double beta : {0.1, 1.0, 10.0})
        for (std::size_t n = 0; n < 50; ++n) EXPECT_LE(mixing_bound(beta, n + 1), mixing_bound(beta, n));
}

TEST(Trajectory, DeterministicPerSeed) {
    const auto spec = ts::random_symmetric_spec(7, 30);
    const auto a = sample_trajectory(spec, 11, 1000);
    const auto b = sample_trajectory(spec, 11, 1000);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.states.size(), 1001u);
    EXPECT_NE(a.states, sample_trajectory(spec, 12, 1000).states);
    EXPECT_THROW(sample_trajectory(spec, 1, 0), InvalidArgument);
}

TEST(Trajectory, FrequenciesAndRetractionRate) {
    const auto spec = ts::two_state_chain();
    const auto t = sample_trajectory(spec, 2024, 1000000);
    double f0 = 0.0;
    for (auto s : t.states) f0 += s == 0 ? 1.0 : 0.0;
    f0 /= static_cast<double>(t.states.size());
    EXPECT_NEAR(f0, 2.0 / 3.0, 0.005);
    EXPECT_NEAR(static_cast<double>(t.retractions) / 1e6, 0.5, 0.01);
    // augmentation moves always swap
    EXPECT_EQ(t.states.front(), 0u);
}

TEST(Trajectory, OneStepLawMatchesTransitionRows) {
    // MC oracle on a 5-state spec: empirical next-state law from each state within 4σ of R.
    const auto spec = ts::random_symmetric_spec(31, 5);
    const auto r = transition_matrix(spec);
    const auto t = sample_trajectory(spec, 5, 400000);
    const auto n = r.rows();
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i + 1 < t.states.size(); ++i)
        counts(static_cast<Eigen::Index>(t.states[i]), static_cast<Eigen::Index>(t.states[i + 1])) += 1.0;
    for (Eigen::Index u = 0; u < n; ++u) {
        const double total = counts.row(u).sum();
        if (total < 1000) continue;
        for (Eigen::Index v = 0; v < n; ++v) {
            const double p = r(u, v);
            const double sd = std::sqrt(std::max(p * (1 - p), 1e-12) / total);
            EXPECT_LE(std::abs(counts(u, v) / total - p), 4 * sd + 1e-12);
        }
    }
}

TEST(Surjectivity, Examples) {
    EXPECT_TRUE(check_surjectivity(ts::two_state_chain()).surjective);
    auto space = ts::two_state_space();
    const ChainSpec stuck(space, {{AugmentationMatrix(space, Eigen::MatrixXd::Identity(2, 2)), 1.0}}, {{0, 1.0}});
    const auto r = check_surjectivity(stuck);
    EXPECT_FALSE(r.surjective);
    EXPECT_EQ(r.unreachable, std::vector<std::size_t>{1});
    auto grid = ts::line_space(15);
    const ChainSpec jitter(grid, {{build_finite_augmentation(grid, DiscretizedJitter{0.7}), 1.0}}, {{3, 1.0}});
    EXPECT_TRUE(check_surjectivity(jitter).surjective);
}

TEST(ChainJson, LoadsInlineAndBuiltAugmentations) {
    const auto j = nlohmann::json::parse(R"({
        "space": {"grid_1d": {"n": 4}},
        "augmentations": [
            {"beta": 0.5, "matrix": [[0,1,0,0],[1,0,0,0],[0,0,0,1],[0,0,1,0]]},
            {"beta": 1.5, "build": {"kind": "discretized-jitter", "sigma": 1.0}}
        ],
        "dataset": [{"state": "s0", "gamma": 0.25}, {"state": "s2", "gamma": 0.75}]
    })");
    const auto spec = chain_spec_from_json(j);
    EXPECT_DOUBLE_EQ(spec.beta(), 2.0);
    EXPECT_DOUBLE_EQ(spec.rho()[2], 0.75);
    EXPECT_EQ(spec.augmentations().size(), 2u);
}

TEST(ChainJson, ErrorsNameTheField) {
    auto j = nlohmann::json::parse(R"({
        "space": {"grid_1d": {"n": 2}},
        "augmentations": [{"beta": 1, "matrix": [[0,1],[1,0]]}],
        "dataset": [{"state": "nope"}]
    })");
    try {
        chain_spec_from_json(j);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(e.field().find("dataset"), std::string::npos) << e.field();
    }
    j.erase("space");
    EXPECT_THROW(chain_spec_from_json(j), ConfigError);
}

TEST(Distribution, ClampsTinyNegativesAndRejectsLargeOnes) {
    Eigen::VectorXd v(3);
    v << 0.5, 0.5 + 5e-13, -5e-13;
    const auto d = make_distribution(v);
    EXPECT_EQ(d[2], 0.0);
    EXPECT_NEAR(d.probs.sum(), 1.0, 1e-15);
    v << 0.5, 0.5 + 1e-9, -1e-9;
    EXPECT_THROW(make_distribution(v), NumericalError);
}

TEST(Distribution, CsvHasStateIds) {
    std::ostringstream os;
    write_distribution_csv(os, ts::two_state_chain().space(), stationary_distribution(ts::two_state_chain()));
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "state_id,probability");
    EXPECT_NE(os.str().find("s0,0.6666666666666666"), std::string::npos);
}
