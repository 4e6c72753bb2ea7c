#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/chain.hpp"
#include "augkern/error.hpp"
#include "augkern/io.hpp"

namespace augkern {

/// Symmetric kernel over the states of a space (or over dataset inputs, in
/// which case `space` is null).
struct KernelMatrix {
    Eigen::MatrixXd matrix;
    SpacePtr space;

    Eigen::Index size() const noexcept { return matrix.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return matrix(i, j); }
};

/// Coefficients ψ = Π₀ρ of the kernel expansion; supported on training states.
struct KernelWeights {
    Eigen::VectorXd psi;
};

/// Choice of the positive reference measure π₀ used to build the kernel.
struct ReferenceMeasure {
    enum class Mode { uniform, reversible, explicit_values };
    Mode mode = Mode::uniform;
    Eigen::VectorXd values;

    static ReferenceMeasure uniform() { return {}; }
    /// Recovered from detailed balance of the augmentations themselves.
    static ReferenceMeasure reversible() { return {Mode::reversible, {}}; }
    static ReferenceMeasure explicit_measure(Eigen::VectorXd v) {
        return {Mode::explicit_values, std::move(v)};
    }
};

/// Measure π₀ satisfying detailed balance for the augmentations, found by
/// propagating the ratios A(u,v)/A(v,u) along a maximum spanning forest
/// (edge strength min(A(u,v), A(v,u)), so tiny entries never set a ratio).
/// Every connected component gets mean mass 1/|Ω|, so mirrored label blocks
/// receive identical measures. Non-reversible inputs yield some measure that
/// will fail the detailed-balance check in induced_kernel.
inline Eigen::VectorXd reversible_measure(const ChainSpec& spec) {
    const auto n = static_cast<Eigen::Index>(spec.size());
    const auto& augs = spec.augmentations();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
    std::vector<char> done(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd strength = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> parent(static_cast<std::size_t>(n), -1);
    std::vector<std::size_t> via(static_cast<std::size_t>(n), 0);
    auto relax = [&](Eigen::Index u) {
        for (Eigen::Index v = 0; v < n; ++v) {
            if (done[static_cast<std::size_t>(v)]) continue;
            for (std::size_t k = 0; k < augs.size(); ++k) {
                const auto& m = augs[k].matrix.matrix();
                const double w = std::min(m(u, v), m(v, u));
                if (w > strength[v]) {
                    strength[v] = w;
                    parent[static_cast<std::size_t>(v)] = u;
                    via[static_cast<std::size_t>(v)] = k;
                }
            }
        }
    };
    for (Eigen::Index root = 0; root < n; ++root) {
        if (done[static_cast<std::size_t>(root)]) continue;
        std::vector<Eigen::Index> component{root};
        done[static_cast<std::size_t>(root)] = 1;
        mu[root] = 1.0;
        relax(root);
        for (;;) {
            Eigen::Index next = -1;
            for (Eigen::Index v = 0; v < n; ++v)
                if (!done[static_cast<std::size_t>(v)] && strength[v] > 0.0 &&
                    (next < 0 || strength[v] > strength[next]))
                    next = v;
            if (next < 0) break;
            const auto u = parent[static_cast<std::size_t>(next)];
            const auto& m = augs[via[static_cast<std::size_t>(next)]].matrix.matrix();
            mu[next] = mu[u] * m(u, next) / m(next, u);
            done[static_cast<std::size_t>(next)] = 1;
            component.push_back(next);
            relax(next);
        }
        double total = 0.0;
        for (auto i : component) total += mu[i];
        const double scale = static_cast<double>(component.size()) / total;
        for (auto i : component) mu[i] *= scale;
    }
    return mu / static_cast<double>(n);
}

/// Largest detailed-balance violation |π₀(u)Aᵢ(u,v) − π₀(v)Aᵢ(v,u)|, relative
/// to the larger of the two fluxes. Fluxes below 1e-12 of the augmentation's
/// largest flux are compared against that floor instead, since their ratio
/// carries no precision near the subnormal range.
struct BalanceViolation {
    double relative = 0.0;
    std::size_t augmentation = 0;
    std::size_t u = 0;
    std::size_t v = 0;
};

inline BalanceViolation detailed_balance_violation(const ChainSpec& spec, const Eigen::VectorXd& pi0) {
    BalanceViolation worst;
    const auto n = static_cast<Eigen::Index>(spec.size());
    for (std::size_t k = 0; k < spec.augmentations().size(); ++k) {
        const auto& m = spec.augmentations()[k].matrix.matrix();
        const double floor = 1e-12 * (pi0.asDiagonal() * m).cwiseAbs().maxCoeff();
        for (Eigen::Index u = 0; u < n; ++u)
            for (Eigen::Index v = u + 1; v < n; ++v) {
                const double a = pi0[u] * m(u, v), b = pi0[v] * m(v, u);
                const double scale = std::max({a, b, floor});
                if (scale == 0.0) continue;
                const double rel = std::abs(a - b) / scale;
                if (rel > worst.relative)
                    worst = {rel, k, static_cast<std::size_t>(u), static_cast<std::size_t>(v)};
            }
    }
    return worst;
}

struct InducedKernel {
    KernelWeights weights;
    KernelMatrix kernel;
    Eigen::VectorXd pi0;
};

/// Symmetric kernel K and weights ψ with ψᵀK equal to the stationary
/// distribution. With M = I(β+1) − A and n = |Ω|:
///   K = n²·Π₀M⁻¹,  ψ = Π₀⁻¹ρ/n².
/// For uniform π₀ this is K = (Π₀(β+1) − Π₀A)⁻¹, ψ = Π₀ρ. The product order
/// matters otherwise: (Π₀M)⁻¹ with ψ = Π₀ρ reproduces ρᵀM⁻ᵀ, not π.
/// Requires every augmentation to satisfy detailed balance with π₀ (relative
/// tolerance 1e-10), which makes Π₀M⁻¹ symmetric.
inline InducedKernel induced_kernel(const ChainSpec& spec,
                                    const ReferenceMeasure& measure = ReferenceMeasure::uniform()) {
    const auto n = static_cast<Eigen::Index>(spec.size());
    Eigen::VectorXd pi0;
    switch (measure.mode) {
        case ReferenceMeasure::Mode::uniform: pi0 = Eigen::VectorXd::Constant(n, 1.0 / n); break;
        case ReferenceMeasure::Mode::reversible: pi0 = reversible_measure(spec); break;
        case ReferenceMeasure::Mode::explicit_values:
            pi0 = measure.values;
            if (pi0.size() != n) throw InvalidArgument("pi0 has the wrong length");
            if (!pi0.allFinite() || pi0.minCoeff() <= 0.0)
                throw InvalidArgument("pi0 must be strictly positive");
            pi0 /= pi0.sum();
            break;
    }
    const auto worst = detailed_balance_violation(spec, pi0);
    if (worst.relative > 1e-10) {
        nlohmann::json report = {{"check", "detailed_balance"},
                                 {"augmentation", worst.augmentation},
                                 {"u", spec.space()[worst.u].id},
                                 {"v", spec.space()[worst.v].id},
                                 {"relative_violation", worst.relative}};
        throw NumericalError("augmentation " + std::to_string(worst.augmentation) +
                                 " violates detailed balance at (" + spec.space()[worst.u].id + ", " +
                                 spec.space()[worst.v].id + "), relative error " +
                                 io::format_double(worst.relative),
                             report.dump());
    }
    // K⁻¹ = MΠ₀⁻¹/n² = Π₀⁻¹(Π₀M)Π₀⁻¹/n², symmetric by detailed balance
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    const Eigen::VectorXd inv0 = pi0.cwiseInverse();
    Eigen::MatrixXd m = pi0.asDiagonal() * resolvent_operator(spec);
    m = inv0.asDiagonal() * (0.5 * (m + m.transpose())) * inv0.asDiagonal() / n2;
    Eigen::MatrixXd k;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) k = llt.solve(Eigen::MatrixXd::Identity(n, n));
    else k = m.partialPivLu().inverse();
    k = 0.5 * (k + k.transpose());
    return {{spec.rho().cwiseQuotient(pi0) / n2}, {std::move(k), spec.space_ptr()}, pi0};
}

/// (I(β+1) − A)⁻¹, the unweighted kernel form used for incremental updates.
inline KernelMatrix unweighted_kernel(const ChainSpec& spec) {
    return {resolvent_operator(spec).partialPivLu().inverse(), spec.space_ptr()};
}

struct KernelReport {
    bool symmetric = false;
    bool positive_definite = false;
    bool nonnegative = false;
    double min_eigenvalue = 0.0;
    double min_entry = 0.0;
    double asymmetry = 0.0;
};

/// Symmetry within 1e-10, smallest eigenvalue of the symmetrized matrix
/// above -1e-10, and entries no smaller than -1e-10.
inline KernelReport verify_kernel_properties(const Eigen::MatrixXd& k) {
    KernelReport r;
    if (k.rows() == 0 || k.rows() != k.cols()) return r;
    r.asymmetry = (k - k.transpose()).cwiseAbs().maxCoeff();
    r.symmetric = r.asymmetry <= 1e-10;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (k + k.transpose()), Eigen::EigenvaluesOnly);
    r.min_eigenvalue = es.eigenvalues().minCoeff();
    r.positive_definite = r.min_eigenvalue > -1e-10;
    r.min_entry = k.minCoeff();
    r.nonnegative = r.min_entry >= -1e-10;
    return r;
}

inline KernelReport verify_kernel_properties(const KernelMatrix& k) {
    return verify_kernel_properties(k.matrix);
}

inline nlohmann::json to_json(const KernelReport& r) {
    return {{"symmetric", r.symmetric},           {"positive_definite", r.positive_definite},
            {"nonnegative", r.nonnegative},       {"min_eigenvalue", r.min_eigenvalue},
            {"min_entry", r.min_entry},           {"asymmetry", r.asymmetry}};
}

namespace detail {

/// Index of the state with the same embedding as `s` and the given label.
inline std::optional<std::size_t> partner(const StateSpace& space, std::size_t s, int label) {
    if (space[s].label == label) return s;
    return space.find_state(space[s].embedding, label);
}

}  // namespace detail

/// Largest difference between corresponding entries of different label
/// blocks, and between cross-label entries and zero.
inline double label_block_deviation(const KernelMatrix& k) {
    if (!k.space) throw InvalidArgument("kernel has no state space");
    const auto& space = *k.space;
    const auto labels = space.labels();
    const int ref = labels.front();
    const auto n = space.size();
    std::vector<std::optional<std::size_t>> ref_partner(n);
    for (std::size_t u = 0; u < n; ++u)
        if (space[u].label != ref) ref_partner[u] = space.find_state(space[u].embedding, ref);
    double dev = 0.0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            const double kv = k.matrix(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
            if (space[u].label != space[v].label) {
                dev = std::max(dev, std::abs(kv));
                continue;
            }
            if (space[u].label == ref) continue;
            const auto& pu = ref_partner[u];
            const auto& pv = ref_partner[v];
            if (!pu || !pv) continue;
            dev = std::max(dev, std::abs(kv - k.matrix(static_cast<Eigen::Index>(*pu), static_cast<Eigen::Index>(*pv))));
        }
    return dev;
}

/// Input-level kernel K(x₁,x₂) := K((x₁,+1),(x₂,+1)) after checking that all
/// label blocks agree within 1e-9. Uses the smallest label when +1 is absent.
inline KernelMatrix input_level_kernel(const KernelMatrix& k) {
    const double dev = label_block_deviation(k);
    if (dev > 1e-9)
        throw NumericalError("label blocks of the kernel differ by " + io::format_double(dev));
    const auto labels = k.space->labels();
    const int label = std::find(labels.begin(), labels.end(), 1) != labels.end() ? 1 : labels.front();
    const auto block = k.space->block(label);
    const auto m = static_cast<Eigen::Index>(block.size());
    Eigen::MatrixXd out(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            out(i, j) = k.matrix(static_cast<Eigen::Index>(block[static_cast<std::size_t>(i)]),
                                 static_cast<Eigen::Index>(block[static_cast<std::size_t>(j)]));
    return {std::move(out), nullptr};
}

/// Kernel-trick classifier ŷ = sign Σᵢ yᵢψ(zᵢ)K(xᵢ, x) over a label-preserving
/// state space with labels in {-1, +1}. Label-block equality is verified once
/// at construction.
class KernelClassifier {
public:
    KernelClassifier(KernelWeights weights, KernelMatrix kernel, std::vector<std::size_t> dataset)
        : weights_(std::move(weights)), kernel_(std::move(kernel)), dataset_(std::move(dataset)) {
        if (!kernel_.space) throw InvalidArgument("kernel classifier needs a state-space kernel");
        const auto& space = *kernel_.space;
        if (dataset_.empty()) throw InvalidArgument("kernel classifier needs training states");
        for (auto z : dataset_) {
            if (z >= space.size()) throw InvalidArgument("training state out of range");
            if (space[z].label != 1 && space[z].label != -1)
                throw InvalidArgument("kernel classifier needs labels in {-1, +1}");
        }
        const double dev = label_block_deviation(kernel_);
        if (dev > 1e-9)
            throw NumericalError("label blocks of the kernel differ by " + io::format_double(dev) +
                                 "; augmentations must preserve labels");
    }

    /// Σᵢ yᵢψ(zᵢ)K(zᵢ, (x, yᵢ)); a missing (x, yᵢ) state contributes 0.
    double score(std::size_t x) const {
        const auto& space = *kernel_.space;
        double s = 0.0;
        for (auto z : dataset_) {
            const double psi = weights_.psi[static_cast<Eigen::Index>(z)];
            if (psi == 0.0) continue;
            const int y = space[z].label;
            auto target = detail::partner(space, x, y);
            if (!target) continue;
            s += y * psi * kernel_(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(*target));
        }
        return s;
    }

    /// Ties (|score| <= 1e-12) go to the label of the nearest training state.
    int classify(std::size_t x) const {
        const double s = score(x);
        if (s > 1e-12) return 1;
        if (s < -1e-12) return -1;
        const auto& space = *kernel_.space;
        double best = std::numeric_limits<double>::infinity();
        int label = space[dataset_.front()].label;
        for (auto z : dataset_) {
            const double d = (space[z].embedding - space[x].embedding).squaredNorm();
            if (d < best) {
                best = d;
                label = space[z].label;
            }
        }
        return label;
    }

private:
    KernelWeights weights_;
    KernelMatrix kernel_;
    std::vector<std::size_t> dataset_;
};

inline int kernel_classify(const KernelWeights& weights, const KernelMatrix& k,
                           const std::vector<std::size_t>& dataset, std::size_t x) {
    return KernelClassifier(weights, k, dataset).classify(x);
}

/// argmax_y π((x, y)) over the labels of the space; a missing (x, y) state
/// has probability 0 and ties go to the smaller label.
inline int bayes_classify(const DistributionVector& pi, const StateSpace& space,
                          const Eigen::VectorXd& x) {
    bool found = false;
    int best_label = 0;
    double best = -1.0;
    for (int y : space.labels()) {
        auto s = space.find_state(x, y);
        found = found || s.has_value();
        const double p = s ? pi[*s] : 0.0;
        if (p > best) {
            best = p;
            best_label = y;
        }
    }
    if (!found) throw InvalidArgument("input embedding is not part of the state space");
    return best_label;
}

struct SeriesUpdate {
    KernelMatrix kernel;
    std::size_t terms = 0;
    double last_term_norm = 0.0;
    double spectral_radius = 0.0;
};

/// Kernel after adding augmentation Â at rate β̂ to the chain behind the
/// unweighted kernel K = (I(β+1) − A)⁻¹: K Σₙ β̂ⁿ((Â − I)K)ⁿ. Summation stops
/// at the first term with max-abs entry below 1e-10, or after `truncation`
/// terms. Throws NumericalError when the series diverges.
inline SeriesUpdate update_kernel_add(const KernelMatrix& k, const AugmentationMatrix& a_hat,
                                      double beta_hat, std::size_t truncation) {
    if (truncation < 1) throw InvalidArgument("truncation must be >= 1");
    if (!(beta_hat >= 0.0)) throw InvalidArgument("beta_hat must be nonnegative");
    const auto n = k.matrix.rows();
    if (a_hat.matrix().rows() != n) throw InvalidArgument("augmentation and kernel sizes differ");
    SeriesUpdate out;
    out.kernel = k;
    if (beta_hat == 0.0) return out;
    const Eigen::MatrixXd step =
        beta_hat * (a_hat.matrix() - Eigen::MatrixXd::Identity(n, n)) * k.matrix;
    out.spectral_radius = step.eigenvalues().cwiseAbs().maxCoeff();
    if (out.spectral_radius >= 1.0) {
        nlohmann::json report = {{"check", "spectral_radius"}, {"value", out.spectral_radius}};
        throw NumericalError("update series diverges (spectral radius " +
                                 io::format_double(out.spectral_radius) + "); recompute directly",
                             report.dump());
    }
    Eigen::MatrixXd term = k.matrix;
    Eigen::MatrixXd sum = k.matrix;
    for (std::size_t t = 1; t <= truncation; ++t) {
        term = term * step;
        sum += term;
        out.terms = t;
        out.last_term_norm = term.cwiseAbs().maxCoeff();
        if (out.last_term_norm < 1e-10) break;
    }
    out.kernel.matrix = std::move(sum);
    return out;
}

struct JitterKernelReport {
    double fitted_bandwidth = 0.0;
    double amplitude = 0.0;
    /// max |row − fit| over the fit window divided by the row's peak value.
    double max_relative_deviation = 0.0;
    Eigen::VectorXd offsets;  // grid offsets from the centre in the fit window
    Eigen::VectorXd row;      // kernel row (identity term removed) on the window
};

/// Builds the discretized-jitter chain on a 1-D grid, takes the induced
/// kernel row through the grid centre with the n = 0 (identity) term of its
/// power series removed, and least-squares fits a·exp(−t²/(2s²)) over the
/// central half of the grid.
inline JitterKernelReport jitter_kernel_check(std::size_t grid_size, double sigma, double beta) {
    if (grid_size < 3) throw InvalidArgument("jitter_kernel_check needs grid_size >= 3");
    if (!(sigma > 0.0) || !(beta > 0.0)) throw InvalidArgument("sigma and beta must be positive");
    auto space = std::make_shared<const StateSpace>(StateSpace::grid_1d(grid_size));
    const std::size_t centre = grid_size / 2;
    ChainSpec spec(space, {{build_finite_augmentation(space, DiscretizedJitter{sigma}), beta}},
                   {{centre, 1.0}});
    const auto ik = induced_kernel(spec, ReferenceMeasure::reversible());
    const double n2 = static_cast<double>(grid_size) * static_cast<double>(grid_size);
    const auto c = static_cast<Eigen::Index>(centre);
    const auto half = static_cast<Eigen::Index>(grid_size / 4);
    const Eigen::Index lo = c - half, hi = c + half;
    const auto m = hi - lo + 1;
    JitterKernelReport r;
    r.offsets.resize(m);
    r.row.resize(m);
    for (Eigen::Index j = lo; j <= hi; ++j) {
        double v = ik.kernel.matrix(c, j);
        if (j == c) v -= n2 * ik.pi0[c] / (beta + 1.0);
        r.offsets[j - lo] = static_cast<double>(j - c);
        r.row[j - lo] = v;
    }
    const double peak = r.row.cwiseAbs().maxCoeff();
    if (!(peak > 0.0) || r.row.maxCoeff() - r.row.minCoeff() <= 1e-14 * peak)
        throw NumericalError("degenerate kernel row; cannot fit a bandwidth");

    auto fit = [&](double s, double& amp) {
        const Eigen::ArrayXd g = (-r.offsets.array().square() / (2.0 * s * s)).exp();
        amp = (r.row.array() * g).sum() / g.square().sum();
        return (r.row.array() - amp * g).square().sum();
    };
    // coarse log-spaced scan, then golden-section refinement on log s
    const double s_lo = 0.05, s_hi = 10.0 * static_cast<double>(grid_size);
    constexpr int kScan = 400;
    double best_t = 0.0, best_err = std::numeric_limits<double>::infinity(), amp = 0.0;
    for (int i = 0; i <= kScan; ++i) {
        const double t = std::log(s_lo) + (std::log(s_hi) - std::log(s_lo)) * i / kScan;
        const double e = fit(std::exp(t), amp);
        if (e < best_err) {
            best_err = e;
            best_t = t;
        }
    }
    const double step = (std::log(s_hi) - std::log(s_lo)) / kScan;
    double a = best_t - step, b = best_t + step;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
        const double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
        if (fit(std::exp(x1), amp) < fit(std::exp(x2), amp)) b = x2;
        else a = x1;
    }
    r.fitted_bandwidth = std::exp(0.5 * (a + b));
    fit(r.fitted_bandwidth, r.amplitude);
    const Eigen::ArrayXd g =
        r.amplitude * (-r.offsets.array().square() / (2.0 * r.fitted_bandwidth * r.fitted_bandwidth)).exp();
    r.max_relative_deviation = (r.row.array() - g).abs().maxCoeff() / r.row.maxCoeff();
    return r;
}

inline nlohmann::json to_json(const JitterKernelReport& r) {
    return {{"fitted_bandwidth", r.fitted_bandwidth},
            {"amplitude", r.amplitude},
            {"max_relative_deviation", r.max_relative_deviation}};
}

}  // namespace augkern
