#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "augkern/kernel.hpp"
#include "augkern/objective.hpp"
#include "support.hpp"

using namespace augkern;
namespace ts = testing_support;
using D = AdditiveNoise::Discretization;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = normal(rng);
    return v;
}

Dataset mixture(std::size_t points, Eigen::Index dim, std::uint64_t seed) {
    MixtureParams p;
    p.points = points;
    p.dim = dim;
    p.seed = seed;
    return two_class_mixture(p);
}

Dataset three_class(std::size_t points, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset d;
    for (std::size_t i = 0; i < points; ++i) {
        const int y = static_cast<int>(i % 3);
        Eigen::Vector2d x = random_vector(2, rng, 0.7);
        x[0] += std::cos(2.0 * y);
        x[1] += std::sin(2.0 * y);
        d.inputs.push_back(x);
        d.labels.push_back(y);
    }
    return d;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

void expect_gradient_matches(const Objective& obj, ObjectiveMode mode, const Eigen::VectorXd& w) {
    const Eigen::VectorXd g = obj.gradient(w, mode);
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        const double fd = ts::central_difference(
            [&](double t) {
                Eigen::VectorXd v = w;
                v[j] = t;
                return obj.value(v, mode);
            },
            w[j], 1e-5);
        EXPECT_LT(rel(g[j], fd), 1e-5) << mode_name(mode) << " coordinate " << j << ": " << g[j] << " vs " << fd;
    }
}

}  // namespace

TEST(AveragedFeatures, IdentitySamplerGivesPhi) {
    const auto f = FeatureMap::random_fourier(3, 16, 1.0, 4);
    const Eigen::Vector3d x(0.2, -1, 0.5);
    EXPECT_EQ(averaged_features(identity_sampler(), f, x), f(x));
}

TEST(AveragedFeatures, SymmetricNoiseOnIdentityFeaturesGivesX) {
    const Eigen::Vector3d x(0.2, -1, 0.5);
    for (auto disc : {D::two_point, D::axis_two_point, D::gauss_hermite})
        EXPECT_LE((averaged_features(noise_sampler(0.3, disc), FeatureMap::identity(), x) - x).cwiseAbs().maxCoeff(),
                  1e-15);
}

TEST(AveragedFeatures, MonteCarloMatchesExact) {
    const auto s = composite_sampler({shift_sampler({0, 1}, {0.5, 0.5}), noise_sampler(0.2, D::two_point)});
    const auto f = FeatureMap::random_fourier(4, 32, 1.0, 9);
    const Eigen::Vector4d x(0.3, -0.4, 1.0, 0.1);
    ASSERT_EQ(s.support(x).size(), 4u);
    const auto exact = averaged_features(s, f, x);
    const auto mc = averaged_features(s, f, x, Expectation::monte_carlo(100000, 3));
    EXPECT_LT((mc - exact).lpNorm<Eigen::Infinity>(), 5e-3);
    EXPECT_EQ(mc, averaged_features(s, f, x, Expectation::monte_carlo(100000, 3)));
}

TEST(AveragedFeatures, ExactModeNeedsEnumerableSampler) {
    EXPECT_THROW(averaged_features(noise_sampler(0.1, D::continuous), FeatureMap::identity(), Eigen::Vector2d(1, 2)),
                 InvalidArgument);
    EXPECT_NO_THROW(averaged_features(noise_sampler(0.1, D::continuous), FeatureMap::identity(), Eigen::Vector2d(1, 2),
                                      Expectation::monte_carlo(10, 1)));
}

TEST(FeatureMap, RandomFourierIsBoundedAndSeeded) {
    const auto f = FeatureMap::random_fourier(5, 64, 0.7, 12);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) EXPECT_LE(f(random_vector(5, rng, 3.0)).squaredNorm(), 2.0 + 1e-12);
    const auto x = random_vector(5, rng);
    EXPECT_EQ(f(x), FeatureMap::random_fourier(5, 64, 0.7, 12)(x));
    EXPECT_NE(f(x), FeatureMap::random_fourier(5, 64, 0.7, 13)(x));
    EXPECT_EQ(feature_map_from_json(f.to_json(), 5)(x), f(x));
}

TEST(FeatureMap, RandomFourierApproximatesGaussianKernel) {
    // E⟨φ(x), φ(x′)⟩ = exp(−‖x − x′‖²/(2σ²))
    const auto f = FeatureMap::random_fourier(2, 20000, 1.5, 2);
    const Eigen::Vector2d x(0.3, -0.2), y(1.0, 0.4);
    EXPECT_NEAR(f(x).dot(f(y)), std::exp(-(x - y).squaredNorm() / (2 * 1.5 * 1.5)), 0.02);
}

TEST(Objective, IdentitySamplerMakesAllModesEqual) {
    std::mt19937_64 rng(2);
    const auto data = mixture(30, 3, 5);
    const auto f = FeatureMap::random_fourier(3, 20, 1.0, 1);
    for (const auto& loss : {LossModel::logistic(), LossModel::squared()}) {
        const Objective obj({data, identity_sampler(), f, loss, ObjectiveMode::none, Expectation::exact()});
        const auto w = random_vector(20, rng);
        const double base = obj.value(w, ObjectiveMode::none);
        for (auto m : all_objective_modes()) {
            EXPECT_NEAR(obj.value(w, m), base, 1e-12) << mode_name(m);
            EXPECT_LE((obj.gradient(w, m) - obj.gradient(w, ObjectiveMode::none)).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Objective, SecondOrderIsExactForSquaredLoss) {
    std::mt19937_64 rng(3);
    const auto data = mixture(40, 3, 6);
    for (auto disc : {D::two_point, D::axis_two_point, D::gauss_hermite}) {
        const Objective obj({data, noise_sampler(0.4, disc), FeatureMap::identity(), LossModel::squared(),
                             ObjectiveMode::true_augmented, Expectation::exact()});
        for (int i = 0; i < 10; ++i) {
            const auto w = random_vector(3, rng);
            const double g = obj.value(w, ObjectiveMode::true_augmented);
            EXPECT_NEAR(obj.value(w, ObjectiveMode::second_order), g, 1e-12 * std::max(1.0, g));
        }
    }
}

TEST(Objective, JensenLowerBoundForLogistic) {
    std::mt19937_64 rng(4);
    const auto data = mixture(30, 2, 7);
    const std::vector<std::pair<TransformSampler, FeatureMap>> setups{
        {noise_sampler(0.5, D::gauss_hermite), FeatureMap::identity()},
        {noise_sampler(0.3, D::axis_two_point), FeatureMap::random_fourier(2, 30, 1.0, 3)},
        {composite_sampler({shift_sampler({0, 1}, {0.5, 0.5}), noise_sampler(0.2, D::two_point)}),
         FeatureMap::random_fourier(2, 30, 0.5, 4)}};
    for (const auto& [s, f] : setups) {
        const Objective obj({data, s, f, LossModel::logistic(), ObjectiveMode::true_augmented, Expectation::exact()});
        for (int i = 0; i < 100; ++i) {
            const auto w = random_vector(obj.parameter_dim(), rng, 2.0);
            EXPECT_LE(obj.value(w, ObjectiveMode::first_order), obj.value(w, ObjectiveMode::true_augmented) + 1e-14);
        }
    }
}

TEST(Objective, SecondOrderCloserForSmallNoise) {
    std::mt19937_64 rng(5);
    const auto data = mixture(40, 2, 8);
    // unit-scale inputs: σ = 0.05
    const Objective obj({data, noise_sampler(0.05, D::gauss_hermite, 5), FeatureMap::random_fourier(2, 50, 1.0, 2),
                         LossModel::logistic(), ObjectiveMode::true_augmented, Expectation::exact()});
    for (int i = 0; i < 20; ++i) {
        const auto w = random_vector(50, rng, 3.0);
        const double g = obj.value(w, ObjectiveMode::true_augmented);
        EXPECT_LE(std::abs(g - obj.value(w, ObjectiveMode::second_order)),
                  std::abs(g - obj.value(w, ObjectiveMode::first_order)));
    }
}

TEST(Objective, SecondOrderOnlyIsPlainPlusPenalty) {
    std::mt19937_64 rng(6);
    const Objective obj({mixture(20, 2, 9), noise_sampler(0.3, D::axis_two_point), FeatureMap::identity(),
                         LossModel::logistic(), ObjectiveMode::none, Expectation::exact()});
    const auto w = random_vector(2, rng);
    EXPECT_NEAR(obj.value(w, ObjectiveMode::second_order_only) - obj.value(w, ObjectiveMode::none),
                obj.value(w, ObjectiveMode::second_order) - obj.value(w, ObjectiveMode::first_order), 1e-13);
}

TEST(Objective, ScalarGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(7);
    const auto data = mixture(15, 2, 10);
    const auto s = composite_sampler({shift_sampler({0, 1}, {0.3, 0.7}), noise_sampler(0.3, D::axis_two_point)});
    for (const auto& loss : {LossModel::logistic(), LossModel::squared()}) {
        const Objective obj({data, s, FeatureMap::random_fourier(2, 8, 1.0, 5), loss, ObjectiveMode::none,
                             Expectation::exact()});
        for (int i = 0; i < 10; ++i) {
            const auto w = random_vector(8, rng);
            for (auto m : all_objective_modes()) expect_gradient_matches(obj, m, w);
        }
    }
}

TEST(Objective, MultinomialGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(8);
    const Objective obj({three_class(18, 3), noise_sampler(0.3, D::gauss_hermite), FeatureMap::random_fourier(2, 6, 1.0, 6),
                         LossModel::multinomial(3), ObjectiveMode::none, Expectation::exact()});
    ASSERT_EQ(obj.parameter_dim(), 18);
    for (int i = 0; i < 10; ++i) {
        const auto w = random_vector(18, rng);
        for (auto m : all_objective_modes()) expect_gradient_matches(obj, m, w);
    }
}

TEST(Objective, MultinomialPenaltyMatchesBruteForceTrace) {
    // ½ Σ_a p_a (WΔ_a)ᵀ H (WΔ_a), summed per point.
    std::mt19937_64 rng(9);
    const auto data = three_class(6, 4);
    const auto f = FeatureMap::random_fourier(2, 5, 1.0, 7);
    const auto s = noise_sampler(0.4, D::axis_two_point);
    const Objective obj({data, s, f, LossModel::multinomial(3), ObjectiveMode::none, Expectation::exact()});
    const auto w = random_vector(15, rng);
    Eigen::Matrix<double, 3, 5, Eigen::RowMajor> W = Eigen::Map<const Eigen::Matrix<double, 3, 5, Eigen::RowMajor>>(w.data());
    double want = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto psi = averaged_features(s, f, data.inputs[i]);
        const Eigen::VectorXd p = softmax(W * psi);
        const Eigen::MatrixXd h = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
        for (const auto& a : s.support(data.inputs[i])) {
            const Eigen::VectorXd u = W * (f(a.z) - psi);
            want += 0.5 * a.p * u.dot(h * u);
        }
    }
    want /= static_cast<double>(data.size());
    EXPECT_NEAR(obj.value(w, ObjectiveMode::second_order_only) - obj.value(w, ObjectiveMode::none), want, 1e-13);
}

TEST(Objective, RejectsBadInputs) {
    const auto data = mixture(10, 2, 1);
    const Objective obj({data, identity_sampler(), FeatureMap::identity(), LossModel::logistic(), ObjectiveMode::none,
                         Expectation::exact()});
    EXPECT_THROW(obj.value(Eigen::VectorXd::Zero(3)), InvalidArgument);
    Dataset bad = data;
    bad.labels[0] = 0;
    EXPECT_THROW(Objective({bad, identity_sampler(), FeatureMap::identity(), LossModel::logistic(),
                            ObjectiveMode::none, Expectation::exact()}),
                 InvalidArgument);
    EXPECT_THROW(Objective({data, noise_sampler(0.1, D::continuous), FeatureMap::identity(), LossModel::logistic(),
                            ObjectiveMode::none, Expectation::exact()}),
                 InvalidArgument);
    EXPECT_EQ(parse_mode("second_order_only"), ObjectiveMode::second_order_only);
    EXPECT_THROW(parse_mode("third_order"), InvalidArgument);
}

TEST(Objective, ResultsIndependentOfWorkers) {
    std::mt19937_64 rng(10);
    const ObjectiveSpec spec{mixture(101, 2, 3), noise_sampler(0.2, D::continuous), FeatureMap::random_fourier(2, 10, 1.0, 1),
                             LossModel::logistic(), ObjectiveMode::second_order, Expectation::monte_carlo(50, 8)};
    const auto w = random_vector(10, rng);
    const Objective a(spec, 1), b(spec, 4);
    EXPECT_EQ(a.value(w), b.value(w));
    EXPECT_EQ(a.gradient(w), b.gradient(w));
    EXPECT_EQ(objective_value(spec, w), a.value(w));
    EXPECT_EQ(objective_gradient(spec, w), a.gradient(w));
}

TEST(AveragedKernel, HandComputedThreePoints) {
    // shift {0, 1} on ℝ²: atoms x and (x₁, x₀), so ψ(x) = m(x)·(1, 1) with m the coordinate mean
    Dataset d;
    d.inputs = {Eigen::Vector2d(1, 3), Eigen::Vector2d(0, -2), Eigen::Vector2d(5, 1)};
    d.labels = {1, -1, 1};
    const auto k = averaged_kernel(d, shift_sampler({0, 1}, {0.5, 0.5}), FeatureMap::identity());
    const double m[] = {2.0, -1.0, 3.0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(k(i, j), 2.0 * m[i] * m[j]);
}

TEST(AveragedKernel, EqualsTransformedBaseKernel) {
    const auto data = mixture(8, 3, 11);
    const auto f = FeatureMap::random_fourier(3, 40, 1.0, 8);
    const auto s = composite_sampler({shift_sampler({0, 2}, {0.6, 0.4}), noise_sampler(0.3, D::two_point)});
    const auto kbar = averaged_kernel(data, s, f);
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < data.size(); ++j) {
            double want = 0.0;
            for (const auto& a : s.support(data.inputs[i]))
                for (const auto& b : s.support(data.inputs[j])) want += a.p * b.p * f(a.z).dot(f(b.z));
            EXPECT_NEAR(kbar(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), want, 1e-10);
        }
    const auto rep = verify_kernel_properties(kbar);
    EXPECT_TRUE(rep.symmetric);
    EXPECT_GT(rep.min_eigenvalue, -1e-10);
}

TEST(AveragedKernel, IdentitySamplerIsGram) {
    const auto data = mixture(6, 2, 12);
    const auto k = averaged_kernel(data, identity_sampler(), FeatureMap::identity());
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(k(i, j), data.inputs[i].dot(data.inputs[j]));
}

TEST(Train, RidgeMatchesNormalEquations) {
    const auto data = mixture(30, 3, 13);
    const double l2 = 0.05;
    const Objective obj({data, identity_sampler(), FeatureMap::identity(), LossModel::squared(), ObjectiveMode::none,
                         Expectation::exact()});
    const auto r = train(obj, Eigen::VectorXd::Zero(3), 0.1, 3000, l2);
    Eigen::MatrixXd x(30, 3);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) {
        x.row(i) = data.inputs[i].transpose();
        y[i] = data.labels[i];
    }
    // ∇ = (2/N)Xᵀ(Xw − y) + l2·w = 0
    const Eigen::VectorXd want =
        ((2.0 / 30) * x.transpose() * x + l2 * Eigen::MatrixXd::Identity(3, 3)).ldlt().solve((2.0 / 30) * x.transpose() * y);
    EXPECT_LT((r.w - want).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Train, ZeroIterationsKeepsInit) {
    const Objective obj({mixture(10, 2, 1), identity_sampler(), FeatureMap::identity(), LossModel::logistic(),
                         ObjectiveMode::none, Expectation::exact()});
    const Eigen::Vector2d init(0.3, -0.7);
    const auto r = train(obj, init, 0.5, 0);
    EXPECT_EQ(r.w, Eigen::VectorXd(init));
    ASSERT_EQ(r.trace.size(), 1u);
    EXPECT_EQ(r.trace[0].iteration, 0u);
}

TEST(Train, LogisticTraceIsMonotone) {
    Dataset d;
    d.inputs = {Eigen::Vector2d(1, 0.5), Eigen::Vector2d(-1, -0.2)};
    d.labels = {1, -1};
    const Objective obj({d, identity_sampler(), FeatureMap::identity(), LossModel::logistic(), ObjectiveMode::none,
                         Expectation::exact()});
    const auto r = train(obj, Eigen::VectorXd::Zero(2), 0.5, 200, 0.1);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].objective, r.trace[i - 1].objective);
    std::ostringstream os;
    write_trace_csv(os, "none", r.trace);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "iteration,mode,objective,grad_norm");
}

TEST(Train, DivergenceIsReported) {
    const Objective obj({mixture(10, 2, 1), identity_sampler(), FeatureMap::identity(), LossModel::squared(),
                         ObjectiveMode::none, Expectation::exact()});
    try {
        train(obj, Eigen::Vector2d(1, 1), 50.0, 100);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_TRUE(nlohmann::json::parse(e.report()).contains("iteration"));
    }
    EXPECT_THROW(train(obj, Eigen::Vector2d(1, 1), 0.0, 1), InvalidArgument);
    EXPECT_THROW(train(obj, Eigen::Vector2d(1, 1), 0.1, 1, -1.0), InvalidArgument);
}

TEST(Sandwich, SquaredIsotropicNoiseIsTight) {
    std::mt19937_64 rng(14);
    const auto data = mixture(20, 3, 14);
    const double sigma = 0.3;
    const auto s = noise_sampler(sigma, D::axis_two_point);
    const Objective obj({data, s, FeatureMap::identity(), LossModel::squared(), ObjectiveMode::true_augmented,
                         Expectation::exact()});
    std::vector<Eigen::VectorXd> probes;
    for (int i = 0; i < 10; ++i) {
        probes.push_back(random_vector(3, rng));
        const auto& w = probes.back();
        EXPECT_NEAR(obj.value(w, ObjectiveMode::true_augmented) - obj.value(w, ObjectiveMode::first_order),
                    sigma * sigma * w.squaredNorm(), 1e-12);
    }
    const auto w_hat = train(Objective({data, s, FeatureMap::identity(), LossModel::squared(), ObjectiveMode::first_order,
                                        Expectation::exact()}),
                             Eigen::VectorXd::Zero(3), 0.1, 3000)
                           .w;
    const auto w_star = train(obj, Eigen::VectorXd::Zero(3), 0.1, 3000).w;
    const auto r = proposition1_check(data, s, FeatureMap::identity(), LossModel::squared(), w_hat, w_star, probes);
    EXPECT_NEAR(r.a, sigma * sigma, 1e-14);
    EXPECT_NEAR(r.b, sigma * sigma, 1e-14);
    EXPECT_TRUE(r.sandwich_ok);
    EXPECT_NEAR(r.worst_lower_slack, 0.0, 1e-12);
    EXPECT_NEAR(r.worst_upper_slack, 0.0, 1e-12);
    EXPECT_TRUE(r.c_positive);
    EXPECT_TRUE(r.distance_ok);
}

TEST(Sandwich, IdentitySamplerDegenerates) {
    const auto data = mixture(10, 2, 15);
    const auto r = proposition1_check(data, identity_sampler(), FeatureMap::identity(), LossModel::logistic(),
                                      Eigen::Vector2d(0.5, -0.5), Eigen::Vector2d(0.5, -0.5));
    EXPECT_EQ(r.a, 0.0);
    EXPECT_EQ(r.b, 0.0);
    EXPECT_TRUE(r.sandwich_ok);
    EXPECT_EQ(r.distance_sq, 0.0);
}

TEST(Sandwich, LogisticHoldsWithLocalAlpha) {
    std::mt19937_64 rng(16);
    const auto data = mixture(20, 2, 16);
    const auto s = noise_sampler(0.3, D::axis_two_point);
    const auto f = FeatureMap::identity();
    auto fit = [&](ObjectiveMode m) {
        return train(Objective({data, s, f, LossModel::logistic(), m, Expectation::exact()}), Eigen::VectorXd::Zero(2),
                     2.0, 5000)
            .w;
    };
    std::vector<Eigen::VectorXd> probes;
    for (int i = 0; i < 20; ++i) probes.push_back(random_vector(2, rng));
    const auto r = proposition1_check(data, s, f, LossModel::logistic(), fit(ObjectiveMode::first_order),
                                      fit(ObjectiveMode::true_augmented), probes);
    EXPECT_GT(r.alpha, 0.0);
    EXPECT_LE(r.alpha, 0.25);
    EXPECT_EQ(r.beta_smooth, 0.25);
    EXPECT_TRUE(r.sandwich_ok);
    EXPECT_TRUE(r.distance_ok);
    const auto j = to_json(r);
    EXPECT_TRUE(j.at("sandwich_ok").get<bool>());
}

TEST(PredictionKl, Examples) {
    const Eigen::Vector3d p(0.2, 0.3, 0.5);
    EXPECT_EQ(prediction_kl(p, p), 0.0);
    EXPECT_DOUBLE_EQ(prediction_kl(Eigen::Vector2d(1, 0), Eigen::Vector2d(0.5, 0.5)), std::log(2.0));
    EXPECT_NEAR(prediction_kl(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, 0)), 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12), 1e-12);
    EXPECT_THROW(prediction_kl(Eigen::Vector2d(0.5, 0.6), Eigen::Vector2d(0.5, 0.5)), InvalidArgument);
    EXPECT_THROW(prediction_kl(Eigen::Vector2d(1, 0), Eigen::Vector3d(1, 0, 0)), InvalidArgument);
}

TEST(PredictionKl, NonnegativeOnRandomPairs) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Eigen::VectorXd p(4), q(4);
        for (int j = 0; j < 4; ++j) {
            p[j] = u(rng);
            q[j] = u(rng);
        }
        p /= p.sum();
        q /= q.sum();
        EXPECT_GE(prediction_kl(p, q), 0.0);
    }
}

TEST(Dataset, MixtureIsSeededAndBalanced) {
    MixtureParams p;
    p.points = 12;
    p.dim = 4;
    p.replicates = 3;
    p.jitter = 0.1;
    p.seed = 3;
    const auto a = two_class_mixture(p), b = two_class_mixture(p);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.labels, (std::vector<int>{1, 1, 1, -1, -1, -1, 1, 1, 1, -1, -1, -1}));
    EXPECT_THROW(dataset_from_json({{"inputs", {{1.0}, {2.0, 3.0}}}, {"labels", {1, -1}}}), ConfigError);
}
