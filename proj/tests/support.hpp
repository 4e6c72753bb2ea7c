// Shared fixtures and independent oracles for the unit and acceptance suites.
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "augkern/augmentation.hpp"
#include "augkern/chain.hpp"
#include "augkern/diagnostics.hpp"
#include "augkern/state_space.hpp"

namespace testing_support {

using namespace augkern;

inline SpacePtr line_space(std::size_t n, std::vector<int> labels = {1}) {
    return std::make_shared<const StateSpace>(StateSpace::grid_1d(n, labels));
}

inline SpacePtr two_state_space() {
    return std::make_shared<const StateSpace>(StateSpace({{"s0", Eigen::VectorXd::Constant(1, 0.0), 1},
                                                          {"s1", Eigen::VectorXd::Constant(1, 1.0), 1}}));
}

inline Eigen::MatrixXd swap2() {
    Eigen::MatrixXd m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}

/// The 2-state swap chain with β = 1 and γ = point mass on s0.
inline ChainSpec two_state_chain(double beta = 1.0) {
    auto space = two_state_space();
    return ChainSpec(space, {{AugmentationMatrix(space, swap2()), beta}}, {{0, 1.0}});
}

/// Random symmetric row-stochastic matrix: random symmetric edge weights
/// scaled by the largest degree, remainder on the diagonal.
inline Eigen::MatrixXd random_symmetric_stochastic(std::size_t n, double density, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto sz = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(sz, sz);
    for (Eigen::Index i = 0; i < sz; ++i)
        for (Eigen::Index j = i + 1; j < sz; ++j)
            if (u(rng) < density || j == i + 1) w(i, j) = w(j, i) = u(rng);
    const double dmax = w.rowwise().sum().maxCoeff() * (1.0 + u(rng));
    Eigen::MatrixXd a = w / dmax;
    for (Eigen::Index i = 0; i < sz; ++i) a(i, i) = 1.0 - a.row(i).sum();
    return a;
}

/// Randomized spec: |Ω| ≤ max_states, 1–3 symmetric augmentations, β ∈ [0.1, 10].
inline ChainSpec random_symmetric_spec(std::uint64_t seed, std::size_t max_states = 200) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> size_d(3, max_states);
    std::uniform_int_distribution<int> count_d(1, 3);
    std::uniform_real_distribution<double> beta_d(0.1, 10.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = size_d(rng);
    auto space = line_space(n);
    const int count = count_d(rng);
    const double total = beta_d(rng);
    std::vector<double> shares(static_cast<std::size_t>(count));
    double s = 0.0;
    for (auto& x : shares) s += (x = 0.2 + u(rng));
    std::vector<RatedAugmentation> augs;
    for (int i = 0; i < count; ++i)
        augs.push_back({AugmentationMatrix(space, random_symmetric_stochastic(n, 3.0 / static_cast<double>(n), rng)),
                        total * shares[static_cast<std::size_t>(i)] / s});
    std::uniform_int_distribution<std::size_t> state_d(0, n - 1);
    const std::size_t d = 1 + state_d(rng) % 4;
    std::vector<Retraction> data;
    double g = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        data.push_back({state_d(rng), 0.1 + u(rng)});
        g += data.back().gamma;
    }
    for (auto& r : data) r.gamma /= g;
    // renormalize exactly so the weights sum to 1 within 1e-12
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < data.size(); ++i) sum += data[i].gamma;
    data.back().gamma = 1.0 - sum;
    return ChainSpec(space, std::move(augs), std::move(data));
}

/// Transition matrix assembled entrywise from Definition-style move probabilities.
inline Eigen::MatrixXd oracle_transition(const ChainSpec& spec) {
    const auto n = static_cast<Eigen::Index>(spec.size());
    const double beta = spec.beta();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index u = 0; u < n; ++u) {
        for (const auto& a : spec.augmentations())
            for (Eigen::Index v = 0; v < n; ++v) r(u, v) += a.rate / (beta + 1.0) * a.matrix.matrix()(u, v);
        for (const auto& d : spec.dataset()) r(u, static_cast<Eigen::Index>(d.state)) += d.gamma / (beta + 1.0);
    }
    return r;
}

/// Fixed point of π ← πR, iterated until successive iterates differ by < tol.
inline Eigen::VectorXd power_iteration(const Eigen::MatrixXd& r, double tol = 1e-12, int max_iter = 1000000) {
    const auto n = r.rows();
    Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < max_iter; ++it) {
        Eigen::RowVectorXd next = pi * r;
        const double diff = (next - pi).cwiseAbs().maxCoeff();
        pi = next;
        if (diff < tol * 1e-2) break;
    }
    return pi.transpose();
}

/// Central finite difference of a scalar function.
template <typename F>
double central_difference(F&& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// |a − b| / max(1, |a|, |b|): relative for large values, absolute near zero.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct RankingOutcome {
    std::string candidate;
    double alignment = 0.0;
    double accuracy = 0.0;
};

/// Synthetic ranking benchmark: two-class mixture with noisy replicates, split
/// by replicate group (every third group held out), RFF features. Reports the
/// training-set alignment of K̄ and held-out kernel ridge accuracy per candidate.
inline std::vector<RankingOutcome> ranking_benchmark(std::uint64_t seed) {
    using D = AdditiveNoise::Discretization;
    MixtureParams p;
    p.points = 240;
    p.dim = 2;
    p.separation = 3.0;
    p.spread = 0.6;
    p.replicates = 4;
    p.jitter = 0.6;
    p.seed = seed;
    const Dataset all = two_class_mixture(p);
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < all.size(); ++i) ((i / 4) % 3 == 2 ? te : tr).push_back(i);
    const Dataset train = all.subset(tr), test = all.subset(te);
    const auto f = FeatureMap::random_fourier(2, 100, 1.0, 7);
    const std::vector<Candidate> candidates{{"identity", identity_sampler()},
                                            {"noise-small", noise_sampler(0.5, D::axis_two_point)},
                                            {"noise-mid", noise_sampler(1.5, D::gauss_hermite, 5)},
                                            {"noise-large", noise_sampler(3.0, D::axis_two_point)},
                                            {"blur", TransformSampler(MovingAverageBlur{2})},
                                            {"shuffle", shift_sampler({0, 1}, {0.5, 0.5})}};
    std::vector<RankingOutcome> out;
    for (const auto& c : candidates)
        out.push_back({c.name, kernel_target_alignment(averaged_kernel(train, c.sampler, f), train.labels),
                       kernel_ridge_accuracy(train, test, c.sampler, f, 1e-3)});
    return out;
}

/// Pairs whose accuracy differs by more than `gap` but whose alignment order disagrees.
inline std::vector<std::pair<std::string, std::string>> ranking_violations(const std::vector<RankingOutcome>& r,
                                                                           double gap = 0.02) {
    std::vector<std::pair<std::string, std::string>> bad;
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = i + 1; j < r.size(); ++j) {
            const double dacc = r[i].accuracy - r[j].accuracy;
            if (std::abs(dacc) <= gap) continue;
            if ((dacc > 0) != (r[i].alignment > r[j].alignment)) bad.emplace_back(r[i].candidate, r[j].candidate);
        }
    return bad;
}

}  // namespace testing_support
