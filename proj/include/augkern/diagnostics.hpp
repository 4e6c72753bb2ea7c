#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/dataset.hpp"
#include "augkern/error.hpp"
#include "augkern/feature_map.hpp"
#include "augkern/io.hpp"
#include "augkern/objective.hpp"
#include "augkern/parallel.hpp"
#include "augkern/rng.hpp"
#include "augkern/sampler.hpp"

namespace augkern {

/// ⟨K, K_Y⟩ / √(⟨K, K⟩⟨K_Y, K_Y⟩) with K_Y(y, y′) = 1{y = y′}, entrywise inner products.
inline double kernel_target_alignment(const Eigen::MatrixXd& k, const std::vector<int>& labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (k.rows() != k.cols() || k.rows() != n)
        throw InvalidArgument("alignment needs a square kernel sized to the labels");
    double num = 0.0, same = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                num += k(i, j);
                same += 1.0;
            }
    const double fro = k.squaredNorm();
    if (!(fro > 0.0)) throw InvalidArgument("kernel has zero Frobenius norm");
    return num / std::sqrt(fro * same);
}

/// Gram matrix of ψ over the chosen rows; point i's MC seed is derived from its dataset index.
inline Eigen::MatrixXd averaged_kernel_subset(const Dataset& data, const std::vector<std::size_t>& rows,
                                              const TransformSampler& sampler, const FeatureMap& fmap,
                                              const Expectation& e) {
    Eigen::MatrixXd psi;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Expectation ei = e;
        ei.seed = derive_seed(e.seed, rows[r]);
        const Eigen::VectorXd v = averaged_features(sampler, fmap, data.inputs.at(rows[r]), ei);
        if (r == 0) psi.resize(v.size(), static_cast<Eigen::Index>(rows.size()));
        psi.col(static_cast<Eigen::Index>(r)) = v;
    }
    Eigen::MatrixXd k = psi.transpose() * psi;
    return 0.5 * (k + k.transpose());
}

struct AlignmentEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::vector<double> values;
};

/// Subsample rows for repeat r; the full dataset in order when subsample = size.
inline std::vector<std::size_t> subsample_rows(std::size_t size, std::size_t subsample, std::uint64_t seed,
                                               std::size_t repeat) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (subsample == size) return idx;
    Rng rng = make_rng(derive_seed(seed, repeat));
    for (std::size_t i = 0; i < subsample; ++i) {  // partial Fisher-Yates
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(size - i));
        std::swap(idx[i], idx[std::min(j, size - 1)]);
    }
    idx.resize(subsample);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline AlignmentEstimate alignment_estimate(const Dataset& data, const TransformSampler& sampler,
                                            const FeatureMap& fmap, std::size_t subsample, std::size_t repeats,
                                            std::uint64_t seed, const Expectation& e = Expectation::exact(),
                                            unsigned workers = 1) {
    data.validate();
    if (subsample < 2) throw InvalidArgument("subsample must be at least 2");
    if (subsample > data.size()) throw InvalidArgument("subsample exceeds dataset size");
    if (repeats < 1) throw InvalidArgument("repeats must be at least 1");
    AlignmentEstimate out;
    out.values.resize(repeats);
    parallel_for(repeats, workers, [&](std::size_t r) {
        const auto rows = subsample_rows(data.size(), subsample, seed, r);
        std::vector<int> labels;
        for (auto i : rows) labels.push_back(data.labels[i]);
        out.values[r] = kernel_target_alignment(averaged_kernel_subset(data, rows, sampler, fmap, e), labels);
    });
    const double n = static_cast<double>(repeats);
    out.mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / n;
    if (repeats > 1) {
        double ss = 0.0;
        for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
        out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

struct Candidate {
    std::string name;
    TransformSampler sampler;
};

struct RankRow {
    std::string candidate;
    double alignment = 0.0;
    double baseline_alignment = 0.0;
    double delta = 0.0;
    bool recommended = false;
    double stderr_ = 0.0;
};

/// subsample = 0 uses the full dataset once; otherwise every candidate and the
/// identity baseline share the same `repeats` subsamples.
struct RankOptions {
    std::size_t subsample = 0;
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    Expectation expectation;
    unsigned workers = 1;
};

inline std::vector<RankRow> rank_transformations(const Dataset& data, const FeatureMap& fmap,
                                                 const std::vector<Candidate>& candidates,
                                                 const RankOptions& opt = {}) {
    if (candidates.empty()) throw InvalidArgument("rank_transformations needs at least one candidate");
    const std::size_t sub = opt.subsample == 0 ? data.size() : opt.subsample;
    const std::size_t reps = opt.subsample == 0 ? 1 : opt.repeats;
    auto estimate = [&](const TransformSampler& s) {
        return alignment_estimate(data, s, fmap, sub, reps, opt.seed, opt.expectation, 1);
    };
    const AlignmentEstimate base = estimate(identity_sampler());
    std::vector<RankRow> rows(candidates.size());
    parallel_for(candidates.size(), opt.workers, [&](std::size_t c) {
        const auto est = estimate(candidates[c].sampler);
        RankRow& r = rows[c];
        r.candidate = candidates[c].name;
        r.alignment = est.mean;
        r.stderr_ = est.stderr_;
        r.baseline_alignment = base.mean;
        r.delta = est.mean - base.mean;
        r.recommended = r.delta > 0.0;
    });
    std::stable_sort(rows.begin(), rows.end(), [](const RankRow& a, const RankRow& b) {
        if (a.alignment != b.alignment) return a.alignment > b.alignment;
        return a.candidate < b.candidate;
    });
    return rows;
}

inline void write_rank_csv(std::ostream& os, const std::vector<RankRow>& rows) {
    os << "candidate,alignment,baseline_alignment,delta,recommended\n";
    for (const auto& r : rows)
        os << r.candidate << ',' << io::format_double(r.alignment) << ',' << io::format_double(r.baseline_alignment)
           << ',' << io::format_double(r.delta) << ',' << (r.recommended ? "true" : "false") << '\n';
}

/// △ = Σᵢ E_{z∼T(xᵢ)}[(1/m)‖φ(xᵢ) − φ(z)‖²].
inline double feature_invariance(const FeatureMap& fmap, const TransformSampler& sampler, const Dataset& data,
                                 const Expectation& e = Expectation::exact(), unsigned workers = 1) {
    const auto feats = dataset_features(data, sampler, fmap, e, workers);
    std::vector<double> terms(feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto& pf = feats[i];
        const Eigen::MatrixXd d = pf.atoms.colwise() - pf.phi;
        terms[i] = (d.colwise().squaredNorm().transpose().array() * pf.weights.array()).sum() /
                   static_cast<double>(pf.phi.size());
    }
    return detail::pairwise_sum(terms, 0, terms.size());
}

/// △(numerator map) / △(denominator map); empty when the denominator is 0.
inline std::optional<double> invariance_ratio(const FeatureMap& numerator, const FeatureMap& denominator,
                                              const TransformSampler& sampler, const Dataset& data,
                                              const Expectation& e = Expectation::exact()) {
    const double den = feature_invariance(denominator, sampler, data, e);
    if (den == 0.0) return std::nullopt;
    return feature_invariance(numerator, sampler, data, e) / den;
}

/// Held-out accuracy of kernel ridge regression with K̄ = ⟨ψ, ψ⟩ and ±1 targets.
inline double kernel_ridge_accuracy(const Dataset& train, const Dataset& test, const TransformSampler& sampler,
                                    const FeatureMap& fmap, double lambda, const Expectation& e = Expectation::exact()) {
    train.validate();
    test.validate();
    if (!(lambda > 0.0)) throw InvalidArgument("ridge lambda must be positive");
    auto psi_of = [&](const Dataset& d) {
        const auto feats = dataset_features(d, sampler, fmap, e);
        Eigen::MatrixXd p(feats.front().psi.size(), static_cast<Eigen::Index>(feats.size()));
        for (std::size_t i = 0; i < feats.size(); ++i) p.col(static_cast<Eigen::Index>(i)) = feats[i].psi;
        return p;
    };
    const Eigen::MatrixXd ptr = psi_of(train);
    const Eigen::MatrixXd pte = psi_of(test);
    const auto n = static_cast<Eigen::Index>(train.size());
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = train.labels[static_cast<std::size_t>(i)];
    Eigen::MatrixXd k = ptr.transpose() * ptr;
    k.diagonal().array() += lambda * static_cast<double>(n);
    const Eigen::VectorXd alpha = k.ldlt().solve(y);
    const Eigen::VectorXd scores = pte.transpose() * (ptr * alpha);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int pred = scores[static_cast<Eigen::Index>(i)] >= 0.0 ? 1 : -1;
        if (pred == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace augkern
