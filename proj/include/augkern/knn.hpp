#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "augkern/chain.hpp"
#include "augkern/error.hpp"
#include "augkern/kernel.hpp"
#include "augkern/parallel.hpp"
#include "augkern/rng.hpp"

namespace augkern {

struct LabeledPoint {
    Eigen::VectorXd embedding;
    int label = 0;
};

namespace detail {

inline int majority(const std::map<int, std::size_t>& votes) {
    int best = 0;
    std::size_t count = 0;
    for (const auto& [label, c] : votes)  // ascending labels: ties keep the smaller one
        if (c > count) {
            best = label;
            count = c;
        }
    return best;
}

}  // namespace detail

/// Majority label among the k samples nearest to x (Euclidean). Distance ties
/// are broken by sample order, vote ties toward the smaller label.
inline int knn_classify(const std::vector<LabeledPoint>& samples, std::size_t k,
                        const Eigen::VectorXd& x) {
    if (samples.empty()) throw InvalidArgument("knn_classify needs samples");
    if (k < 1 || k > samples.size())
        throw InvalidArgument("knn_classify needs 1 <= k <= number of samples");
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        order.emplace_back((samples[i].embedding - x).squaredNorm(), i);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::map<int, std::size_t> votes;
    for (std::size_t i = 0; i < k; ++i) ++votes[samples[order[i].second].label];
    return detail::majority(votes);
}

/// k-NN over samples given as state indices of a space; same semantics as
/// knn_classify on the corresponding embeddings, in O(samples + |Ω| log |Ω|).
inline int knn_classify_states(const StateSpace& space, const std::vector<std::uint32_t>& samples,
                               std::size_t k, const Eigen::VectorXd& x) {
    if (samples.empty()) throw InvalidArgument("knn_classify needs samples");
    if (k < 1 || k > samples.size())
        throw InvalidArgument("knn_classify needs 1 <= k <= number of samples");
    const auto n = space.size();
    std::vector<double> dist(n);
    for (std::size_t s = 0; s < n; ++s) dist[s] = (space[s].embedding - x).squaredNorm();
    std::vector<std::size_t> counts(n, 0);
    for (auto s : samples) ++counts[s];
    std::vector<double> levels(dist);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    std::map<int, std::size_t> votes;
    std::size_t taken = 0;
    for (double level : levels) {
        std::size_t at_level = 0;
        for (std::size_t s = 0; s < n; ++s)
            if (dist[s] == level) at_level += counts[s];
        if (taken + at_level <= k) {
            for (std::size_t s = 0; s < n; ++s)
                if (dist[s] == level && counts[s] > 0) votes[space[s].label] += counts[s];
            taken += at_level;
            if (taken == k) break;
            continue;
        }
        // partial level: first samples in order
        for (auto s : samples) {
            if (dist[s] != level) continue;
            ++votes[space[s].label];
            if (++taken == k) break;
        }
        break;
    }
    return detail::majority(votes);
}

/// Default k(n) = ⌈√n⌉.
inline std::size_t default_k(std::size_t n) {
    auto k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    while (k * k < n) ++k;
    while (k > 1 && (k - 1) * (k - 1) >= n) --k;
    return std::max<std::size_t>(k, 1);
}

/// Burn-in ⌈10(β+1)ln(1/ε)⌉ steps, ε = 1e-6.
inline std::size_t burn_in_steps(double beta) {
    return static_cast<std::size_t>(std::ceil(10.0 * (beta + 1.0) * std::log(1e6)));
}

struct EquivalenceConfig {
    std::vector<std::size_t> test_states;
    std::vector<std::size_t> sample_counts;
    std::size_t replicates = 1;
    std::function<std::size_t(std::size_t)> k_rule = default_k;
    std::uint64_t master_seed = 0;
    unsigned workers = 1;
};

struct EquivalenceRow {
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::size_t test_state = 0;
    int knn_label = 0;
    int kernel_label = 0;
    int bayes_label = 0;
    bool agree = false;
};

/// Post-burn-in chain states for one experiment cell.
inline std::vector<std::uint32_t> chain_samples(const ChainSpec& spec, std::uint64_t seed,
                                                std::size_t n) {
    ChainSampler sampler(spec);
    Rng rng = make_rng(seed);
    std::size_t state = sampler.initial(rng);
    bool retracted = false;
    for (std::size_t i = 0, burn = burn_in_steps(spec.beta()); i < burn; ++i)
        state = sampler.step(state, rng, retracted);
    std::vector<std::uint32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        state = sampler.step(state, rng, retracted);
        out[i] = static_cast<std::uint32_t>(state);
    }
    return out;
}

/// For every (n, replicate) cell: draws n chain states after burn-in,
/// classifies each test state by k-NN and compares with the induced kernel
/// classifier. Rows are ordered by (n, replicate, test state) regardless of
/// the worker count.
inline std::vector<EquivalenceRow> equivalence_experiment(const ChainSpec& spec,
                                                          const EquivalenceConfig& cfg) {
    if (!spec.label_preserving())
        throw InvalidArgument("equivalence experiment needs label-preserving augmentations");
    const auto reach = check_surjectivity(spec);
    if (!reach.surjective)
        throw InvalidArgument("chain is not surjective: " + std::to_string(reach.unreachable.size()) +
                              " unreachable states");
    if (cfg.replicates < 1) throw InvalidArgument("replicates must be >= 1");
    for (auto t : cfg.test_states)
        if (t >= spec.size()) throw InvalidArgument("test state out of range");

    const auto ik = induced_kernel(spec, ReferenceMeasure::reversible());
    std::vector<std::size_t> dataset;
    for (const auto& r : spec.dataset()) dataset.push_back(r.state);
    const KernelClassifier kc(ik.weights, ik.kernel, dataset);
    const auto pi = stationary_distribution(spec);
    const auto& space = spec.space();

    std::vector<int> kernel_labels, bayes_labels;
    for (auto t : cfg.test_states) {
        kernel_labels.push_back(kc.classify(t));
        bayes_labels.push_back(bayes_classify(pi, space, space[t].embedding));
    }

    const std::size_t cells = cfg.sample_counts.size() * cfg.replicates;
    std::vector<std::vector<EquivalenceRow>> results(cells);
    parallel_for(cells, cfg.workers, [&](std::size_t cell) {
        const std::size_t ni = cell / cfg.replicates, rep = cell % cfg.replicates;
        const std::size_t n = cfg.sample_counts[ni];
        const std::size_t k = cfg.k_rule(n);
        if (k < 1 || k > n) throw InvalidArgument("k rule produced k outside [1, n]");
        const std::uint64_t seed = derive_seed(cfg.master_seed, cell);
        const auto samples = chain_samples(spec, seed, n);
        auto& rows = results[cell];
        for (std::size_t i = 0; i < cfg.test_states.size(); ++i) {
            const auto t = cfg.test_states[i];
            EquivalenceRow row{n, k, rep, seed, t, 0, kernel_labels[i], bayes_labels[i], false};
            row.knn_label = knn_classify_states(space, samples, k, space[t].embedding);
            row.agree = row.knn_label == row.kernel_label;
            rows.push_back(row);
        }
    });
    std::vector<EquivalenceRow> table;
    for (auto& r : results) table.insert(table.end(), r.begin(), r.end());
    return table;
}

struct AgreementSummary {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<double> per_replicate;
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Agreement fraction per sample count, with its Monte-Carlo standard error across replicates.
inline std::vector<AgreementSummary> summarize(const std::vector<EquivalenceRow>& table) {
    std::map<std::size_t, std::map<std::size_t, std::pair<std::size_t, std::size_t>>> acc;
    std::map<std::size_t, std::size_t> ks;
    for (const auto& r : table) {
        auto& c = acc[r.n][r.replicate];
        c.first += r.agree ? 1 : 0;
        c.second += 1;
        ks[r.n] = r.k;
    }
    std::vector<AgreementSummary> out;
    for (const auto& [n, reps] : acc) {
        AgreementSummary s;
        s.n = n;
        s.k = ks[n];
        for (const auto& [rep, c] : reps)
            s.per_replicate.push_back(static_cast<double>(c.first) / static_cast<double>(c.second));
        const double m = static_cast<double>(s.per_replicate.size());
        for (double a : s.per_replicate) s.mean += a / m;
        if (s.per_replicate.size() > 1) {
            double var = 0.0;
            for (double a : s.per_replicate) var += (a - s.mean) * (a - s.mean);
            s.stderr_ = std::sqrt(var / (m - 1.0) / m);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Least-squares fit of log y = c + e·log x; returns {e, c}. Points with
/// non-positive coordinates are skipped.
inline std::pair<double, double> fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i)
        if (xs[i] > 0.0 && ys[i] > 0.0) {
            lx.push_back(std::log(xs[i]));
            ly.push_back(std::log(ys[i]));
        }
    if (lx.size() < 2) throw InvalidArgument("power-law fit needs two positive points");
    const double m = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / m;
        my += ly[i] / m;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx == 0.0) throw InvalidArgument("power-law fit needs distinct x values");
    const double e = sxy / sxx;
    return {e, my - e * mx};
}

/// CSV columns n,k,seed,test_state_id,knn_label,kernel_label,agree.
inline void write_agreement_csv(std::ostream& os, const StateSpace& space,
                                const std::vector<EquivalenceRow>& table) {
    os << "n,k,seed,test_state_id,knn_label,kernel_label,agree\n";
    for (const auto& r : table)
        os << r.n << ',' << r.k << ',' << r.seed << ',' << space[r.test_state].id << ',' << r.knn_label
           << ',' << r.kernel_label << ',' << (r.agree ? 1 : 0) << '\n';
}

}  // namespace augkern
