#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/dataset.hpp"
#include "augkern/error.hpp"
#include "augkern/feature_map.hpp"
#include "augkern/io.hpp"
#include "augkern/loss.hpp"
#include "augkern/parallel.hpp"
#include "augkern/rng.hpp"
#include "augkern/sampler.hpp"

namespace augkern {

/// How E_{z∼T(x)} is computed: over the enumerated support, or as a sample
/// mean of `samples` draws seeded from `seed`.
struct Expectation {
    enum class Kind { exact, monte_carlo };
    Kind kind = Kind::exact;
    std::size_t samples = 0;
    std::uint64_t seed = 0;

    static Expectation exact() { return {}; }
    static Expectation monte_carlo(std::size_t n, std::uint64_t seed) {
        if (n == 0) throw InvalidArgument("monte-carlo expectation needs at least one sample");
        return {Kind::monte_carlo, n, seed};
    }
};

enum class ObjectiveMode { none, true_augmented, first_order, second_order, second_order_only };

inline const std::vector<ObjectiveMode>& all_objective_modes() {
    static const std::vector<ObjectiveMode> modes{ObjectiveMode::none, ObjectiveMode::true_augmented,
                                                  ObjectiveMode::first_order, ObjectiveMode::second_order,
                                                  ObjectiveMode::second_order_only};
    return modes;
}

inline std::string mode_name(ObjectiveMode m) {
    switch (m) {
        case ObjectiveMode::none: return "none";
        case ObjectiveMode::true_augmented: return "true";
        case ObjectiveMode::first_order: return "first_order";
        case ObjectiveMode::second_order: return "second_order";
        default: return "second_order_only";
    }
}

inline ObjectiveMode parse_mode(const std::string& s) {
    for (auto m : all_objective_modes())
        if (mode_name(m) == s) return m;
    throw InvalidArgument("unknown objective mode '" + s + "'");
}

/// Transformed atoms of one data point in feature space.
struct PointFeatures {
    Eigen::VectorXd phi;      // φ(x)
    Eigen::MatrixXd atoms;    // φ(z_a) as columns
    Eigen::VectorXd weights;  // p_a
    Eigen::VectorXd psi;      // Σ p_a φ(z_a)
};

inline PointFeatures point_features(const TransformSampler& sampler, const FeatureMap& fmap,
                                    const Eigen::VectorXd& x, const Expectation& e) {
    PointFeatures pf;
    pf.phi = fmap(x);
    const Eigen::Index m = pf.phi.size();
    if (e.kind == Expectation::Kind::exact) {
        if (!sampler.enumerable())
            throw InvalidArgument("exact expectation needs an enumerable sampler, got " + sampler.kind_name());
        const Support sup = sampler.support(x);
        pf.atoms.resize(m, static_cast<Eigen::Index>(sup.size()));
        pf.weights.resize(static_cast<Eigen::Index>(sup.size()));
        for (std::size_t a = 0; a < sup.size(); ++a) {
            pf.atoms.col(static_cast<Eigen::Index>(a)) = fmap(sup[a].z);
            pf.weights[static_cast<Eigen::Index>(a)] = sup[a].p;
        }
    } else {
        if (e.samples == 0) throw InvalidArgument("monte-carlo expectation needs at least one sample");
        Rng rng = make_rng(e.seed);
        pf.atoms.resize(m, static_cast<Eigen::Index>(e.samples));
        for (std::size_t a = 0; a < e.samples; ++a)
            pf.atoms.col(static_cast<Eigen::Index>(a)) = fmap(sampler.sample(x, rng));
        pf.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(e.samples), 1.0 / e.samples);
    }
    pf.psi = pf.atoms * pf.weights;
    return pf;
}

/// ψ(x) = E_{z∼T(x)}[φ(z)].
inline Eigen::VectorXd averaged_features(const TransformSampler& sampler, const FeatureMap& fmap,
                                         const Eigen::VectorXd& x, const Expectation& e = Expectation::exact()) {
    return point_features(sampler, fmap, x, e).psi;
}

/// Per-point features for a dataset; point i uses MC seed derive_seed(seed, i).
inline std::vector<PointFeatures> dataset_features(const Dataset& data, const TransformSampler& sampler,
                                                   const FeatureMap& fmap, const Expectation& e,
                                                   unsigned workers = 1) {
    data.validate();
    std::vector<PointFeatures> out(data.size());
    parallel_for(data.size(), workers, [&](std::size_t i) {
        Expectation ei = e;
        ei.seed = derive_seed(e.seed, i);
        out[i] = point_features(sampler, fmap, data.inputs[i], ei);
    });
    return out;
}

/// K̄(xᵢ, xⱼ) = ⟨ψ(xᵢ), ψ(xⱼ)⟩.
inline Eigen::MatrixXd averaged_kernel(const Dataset& data, const TransformSampler& sampler, const FeatureMap& fmap,
                                       const Expectation& e = Expectation::exact(), unsigned workers = 1) {
    const auto feats = dataset_features(data, sampler, fmap, e, workers);
    Eigen::MatrixXd psi(feats.front().psi.size(), static_cast<Eigen::Index>(feats.size()));
    for (std::size_t i = 0; i < feats.size(); ++i) psi.col(static_cast<Eigen::Index>(i)) = feats[i].psi;
    Eigen::MatrixXd k = psi.transpose() * psi;
    return 0.5 * (k + k.transpose());
}

namespace detail {

template <typename T>
T pairwise_sum(const std::vector<T>& v, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return v[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

}  // namespace detail

struct ObjectiveSpec {
    Dataset dataset;
    TransformSampler sampler;
    FeatureMap feature_map;
    LossModel loss;
    ObjectiveMode mode = ObjectiveMode::true_augmented;
    Expectation expectation;
};

/// Empirical objective (1/N)Σ over the dataset, in any of the five modes.
///
/// Scalar losses take w ∈ ℝᵐ. Multinomial takes a C×m weight matrix flattened
/// row-major, so class c owns w[c·m, (c+1)·m).
class Objective {
public:
    explicit Objective(ObjectiveSpec spec, unsigned workers = 1) : spec_(std::move(spec)), workers_(workers) {
        spec_.dataset.validate();
        for (int y : spec_.dataset.labels) spec_.loss.check_label(y);
        features_ = dataset_features(spec_.dataset, spec_.sampler, spec_.feature_map, spec_.expectation, workers_);
        m_ = features_.front().phi.size();
    }

    const ObjectiveSpec& spec() const noexcept { return spec_; }
    const std::vector<PointFeatures>& features() const noexcept { return features_; }
    Eigen::Index feature_dim() const noexcept { return m_; }
    Eigen::Index parameter_dim() const noexcept {
        return spec_.loss.scalar() ? m_ : m_ * spec_.loss.num_classes;
    }

    double value(const Eigen::VectorXd& w) const { return value(w, spec_.mode); }
    Eigen::VectorXd gradient(const Eigen::VectorXd& w) const { return gradient(w, spec_.mode); }

    double value(const Eigen::VectorXd& w, ObjectiveMode mode) const { return evaluate(w, mode, false).first; }
    Eigen::VectorXd gradient(const Eigen::VectorXd& w, ObjectiveMode mode) const {
        return evaluate(w, mode, true).second;
    }

    std::pair<double, Eigen::VectorXd> evaluate(const Eigen::VectorXd& w, ObjectiveMode mode, bool grad) const {
        if (w.size() != parameter_dim())
            throw InvalidArgument("parameter dimension " + std::to_string(w.size()) + " != " +
                                  std::to_string(parameter_dim()));
        const std::size_t n = features_.size();
        std::vector<double> vals(n);
        std::vector<Eigen::VectorXd> grads(grad ? n : 0);
        parallel_for(n, workers_, [&](std::size_t i) {
            Eigen::VectorXd g;
            vals[i] = spec_.loss.scalar() ? scalar_term(i, w, mode, grad ? &g : nullptr)
                                          : multinomial_term(i, w, mode, grad ? &g : nullptr);
            if (grad) grads[i] = std::move(g);
        });
        const double inv = 1.0 / static_cast<double>(n);
        std::pair<double, Eigen::VectorXd> out{inv * detail::pairwise_sum(vals, 0, n), Eigen::VectorXd()};
        if (grad) out.second = inv * detail::pairwise_sum(grads, 0, n);
        return out;
    }

    /// Class distribution predicted at input x (un-augmented features).
    Eigen::VectorXd predict_proba(const Eigen::VectorXd& w, const Eigen::VectorXd& x) const {
        const Eigen::VectorXd phi = spec_.feature_map(x);
        if (spec_.loss.kind == LossModel::Kind::logistic) {
            const double p = 1.0 / (1.0 + std::exp(-w.dot(phi)));
            return Eigen::Vector2d(p, 1.0 - p);
        }
        if (spec_.loss.kind == LossModel::Kind::multinomial) return softmax(weights(w) * phi);
        throw InvalidArgument("squared loss has no class distribution");
    }

private:
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Eigen::Map<const RowMajor> weights(const Eigen::VectorXd& w) const {
        return {w.data(), spec_.loss.num_classes, m_};
    }

    double scalar_term(std::size_t i, const Eigen::VectorXd& w, ObjectiveMode mode, Eigen::VectorXd* g) const {
        const auto& pf = features_[i];
        const int y = spec_.dataset.labels[i];
        const auto& loss = spec_.loss;
        double v = 0.0;
        if (g) g->setZero(m_);
        if (mode == ObjectiveMode::none || mode == ObjectiveMode::second_order_only) {
            const auto l = loss_eval(loss, w.dot(pf.phi), y);
            v += l.value;
            if (g) *g += l.first * pf.phi;
        }
        if (mode == ObjectiveMode::true_augmented) {
            const Eigen::VectorXd s = pf.atoms.transpose() * w;
            for (Eigen::Index a = 0; a < s.size(); ++a) {
                const auto l = loss_eval(loss, s[a], y);
                v += pf.weights[a] * l.value;
                if (g) *g += (pf.weights[a] * l.first) * pf.atoms.col(a);
            }
        }
        if (mode == ObjectiveMode::first_order || mode == ObjectiveMode::second_order) {
            const auto l = loss_eval(loss, w.dot(pf.psi), y);
            v += l.value;
            if (g) *g += l.first * pf.psi;
        }
        if (mode == ObjectiveMode::second_order || mode == ObjectiveMode::second_order_only) {
            // ½ wᵀE[ΔΔᵀ]w · l″(wᵀψ), with wᵀΔ_a = s_a − wᵀψ.
            const double sp = w.dot(pf.psi);
            const Eigen::ArrayXd d = (pf.atoms.transpose() * w).array() - sp;
            const double var = (pf.weights.array() * d.square()).sum();
            const double l2 = loss_eval(loss, sp, y).second;
            v += 0.5 * var * l2;
            if (g) {
                const Eigen::VectorXd cw = (pf.atoms * (pf.weights.array() * d).matrix());  // E[Δ wᵀΔ]
                *g += l2 * cw + (0.5 * var * loss_third(loss, sp)) * pf.psi;
            }
        }
        return v;
    }

    double multinomial_term(std::size_t i, const Eigen::VectorXd& w, ObjectiveMode mode, Eigen::VectorXd* g) const {
        const auto& pf = features_[i];
        const int y = spec_.dataset.labels[i];
        const auto& loss = spec_.loss;
        const auto W = weights(w);
        const Eigen::Index c = loss.num_classes;
        double v = 0.0;
        RowMajor G;
        if (g) G.setZero(c, m_);
        auto add_point = [&](const Eigen::VectorXd& phi, double weight) {
            const auto l = loss_eval(loss, Eigen::VectorXd(W * phi), y);
            v += weight * l.value;
            if (g) G += weight * l.gradient * phi.transpose();
        };
        if (mode == ObjectiveMode::none || mode == ObjectiveMode::second_order_only) add_point(pf.phi, 1.0);
        if (mode == ObjectiveMode::true_augmented)
            for (Eigen::Index a = 0; a < pf.atoms.cols(); ++a) add_point(pf.atoms.col(a), pf.weights[a]);
        if (mode == ObjectiveMode::first_order || mode == ObjectiveMode::second_order) add_point(pf.psi, 1.0);
        if (mode == ObjectiveMode::second_order || mode == ObjectiveMode::second_order_only) {
            // ½ tr(W E[ΔΔᵀ] Wᵀ H(Wψ)) with H = diag(p) − ppᵀ.
            const Eigen::VectorXd p = softmax(W * pf.psi);
            const Eigen::MatrixXd H = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
            const Eigen::MatrixXd delta = pf.atoms.colwise() - pf.psi;
            const Eigen::MatrixXd wd = W * delta;  // C × atoms
            const Eigen::MatrixXd cov = wd * pf.weights.asDiagonal() * wd.transpose();
            v += 0.5 * (cov.cwiseProduct(H)).sum();
            if (g) {
                G += H * wd * pf.weights.asDiagonal() * delta.transpose();
                const Eigen::VectorXd u = H * (0.5 * cov.diagonal() - cov * p);
                G += u * pf.psi.transpose();
            }
        }
        if (g) *g = Eigen::Map<const Eigen::VectorXd>(G.data(), G.size());
        return v;
    }

    ObjectiveSpec spec_;
    unsigned workers_;
    std::vector<PointFeatures> features_;
    Eigen::Index m_ = 0;
};

inline double objective_value(const ObjectiveSpec& spec, const Eigen::VectorXd& w) {
    return Objective(spec).value(w);
}

inline Eigen::VectorXd objective_gradient(const ObjectiveSpec& spec, const Eigen::VectorXd& w) {
    return Objective(spec).gradient(w);
}

struct TraceRow {
    std::size_t iteration = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    Eigen::VectorXd w;
    std::vector<TraceRow> trace;  // iterations 0..n, objective includes the ridge term
};

/// Full-batch gradient descent on objective(w) + (l2/2)‖w‖². `visit`, when
/// set, sees every iterate w_0..w_n.
inline TrainResult train(const Objective& obj, const Eigen::VectorXd& init, double step, std::size_t iterations,
                         double l2 = 0.0,
                         const std::function<void(std::size_t, const Eigen::VectorXd&)>& visit = {}) {
    if (!(step > 0.0)) throw InvalidArgument("step size must be positive");
    if (!(l2 >= 0.0)) throw InvalidArgument("l2 must be nonnegative");
    if (init.size() != obj.parameter_dim()) throw InvalidArgument("initial w has the wrong dimension");
    TrainResult r{init, {}};
    const ObjectiveMode mode = obj.spec().mode;
    double first = 0.0;
    for (std::size_t it = 0;; ++it) {
        auto [v, g] = obj.evaluate(r.w, mode, true);
        v += 0.5 * l2 * r.w.squaredNorm();
        g += l2 * r.w;
        if (it == 0) first = v;
        if (!std::isfinite(v) || (first > 0.0 && v > 1e6 * first)) {
            nlohmann::json report{{"iteration", it}, {"initial_objective", first},
                                  {"objective", std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("non-finite")},
                                  {"step_size", step}};
            throw NumericalError("gradient descent diverged", report.dump());
        }
        r.trace.push_back({it, v, g.norm()});
        if (visit) visit(it, r.w);
        if (it == iterations) break;
        r.w -= step * g;
    }
    return r;
}

inline void write_trace_csv(std::ostream& os, const std::string& mode, const std::vector<TraceRow>& trace) {
    os << "iteration,mode,objective,grad_norm\n";
    for (const auto& t : trace)
        os << t.iteration << ',' << mode << ',' << io::format_double(t.objective) << ','
           << io::format_double(t.grad_norm) << '\n';
}

/// Sandwich and distance bounds relating g − ĝ to the augmentation covariance.
struct Prop1Report {
    double a = 0.0, b = 0.0, c = 0.0;
    double alpha = 0.0, beta_smooth = 0.0;
    bool c_positive = false;
    bool sandwich_ok = false;
    bool distance_ok = false;
    double worst_lower_slack = 0.0;  // min over w of (g − ĝ) − αa/2‖w‖²
    double worst_upper_slack = 0.0;  // min over w of βb/2‖w‖² − (g − ĝ)
    double distance_sq = 0.0;
    double distance_bound = 0.0;
};

inline nlohmann::json to_json(const Prop1Report& r) {
    return {{"a", r.a},
            {"b", r.b},
            {"c", r.c},
            {"alpha", r.alpha},
            {"beta_smooth", r.beta_smooth},
            {"c_positive", r.c_positive},
            {"sandwich_ok", r.sandwich_ok},
            {"distance_ok", r.distance_ok},
            {"worst_lower_slack", r.worst_lower_slack},
            {"worst_upper_slack", r.worst_upper_slack},
            {"distance_sq", r.distance_sq},
            {"distance_bound", std::isfinite(r.distance_bound) ? nlohmann::json(r.distance_bound)
                                                                : nlohmann::json(nullptr)}};
}

/// Evaluates both bounds with exact expectations at `probes` plus ŵ and w*.
/// Inequalities are checked with absolute slack 1e-10·max(1, |g|).
inline Prop1Report proposition1_check(const Dataset& data, const TransformSampler& sampler, const FeatureMap& fmap,
                                      const LossModel& loss, const Eigen::VectorXd& w_hat,
                                      const Eigen::VectorXd& w_star, const std::vector<Eigen::VectorXd>& probes = {}) {
    if (!loss.scalar()) throw InvalidArgument("proposition1_check supports scalar losses only");
    const Objective obj({data, sampler, fmap, loss, ObjectiveMode::true_augmented, Expectation::exact()});
    const auto& feats = obj.features();
    const Eigen::Index m = obj.feature_dim();
    const double n = static_cast<double>(feats.size());

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(m, m);
    for (const auto& pf : feats) {
        const Eigen::MatrixXd d = pf.atoms.colwise() - pf.psi;
        cov += d * pf.weights.asDiagonal() * d.transpose();
        second += pf.psi * pf.psi.transpose();
    }
    cov /= n;
    second /= n;
    Prop1Report r;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(0.5 * (cov + cov.transpose()), Eigen::EigenvaluesOnly);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (second + second.transpose()),
                                                            Eigen::EigenvaluesOnly);
    r.a = std::max(0.0, ec.eigenvalues().minCoeff());
    r.b = std::max(0.0, ec.eigenvalues().maxCoeff());
    r.c = es.eigenvalues().minCoeff();
    r.c_positive = r.c > 0.0;

    std::vector<Eigen::VectorXd> ws = probes;
    ws.push_back(w_hat);
    ws.push_back(w_star);
    for (const auto& w : ws)
        if (w.size() != m) throw InvalidArgument("probe w has the wrong dimension");

    if (loss.kind == LossModel::Kind::squared) {
        r.alpha = r.beta_smooth = 2.0;
    } else {
        r.beta_smooth = 0.25;
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& w : ws)
            for (const auto& pf : feats) {
                lo = std::min(lo, 0.25 * detail::sech2(w.dot(pf.psi) / 2.0));
                const Eigen::VectorXd s = pf.atoms.transpose() * w;
                for (Eigen::Index a = 0; a < s.size(); ++a) lo = std::min(lo, 0.25 * detail::sech2(s[a] / 2.0));
            }
        r.alpha = lo;
    }

    r.sandwich_ok = true;
    r.worst_lower_slack = r.worst_upper_slack = std::numeric_limits<double>::infinity();
    for (const auto& w : ws) {
        const double g = obj.value(w, ObjectiveMode::true_augmented);
        const double gh = obj.value(w, ObjectiveMode::first_order);
        const double gap = g - gh;
        const double nw = w.squaredNorm();
        const double lower = gap - 0.5 * r.alpha * r.a * nw;
        const double upper = 0.5 * r.beta_smooth * r.b * nw - gap;
        r.worst_lower_slack = std::min(r.worst_lower_slack, lower);
        r.worst_upper_slack = std::min(r.worst_upper_slack, upper);
        const double tol = 1e-10 * std::max(1.0, std::abs(g));
        if (lower < -tol || upper < -tol) r.sandwich_ok = false;
    }
    r.distance_sq = (w_star - w_hat).squaredNorm();
    if (r.c_positive && r.alpha > 0.0) {
        r.distance_bound = r.beta_smooth * r.b / (r.alpha * r.c) * w_hat.squaredNorm();
        r.distance_ok = r.distance_sq <= r.distance_bound + 1e-10 * std::max(1.0, r.distance_bound);
    } else {
        r.distance_bound = std::numeric_limits<double>::infinity();
        r.distance_ok = false;
    }
    return r;
}

/// Σ p log(p/q) with q floored at 1e-12.
inline double prediction_kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    auto check = [](const Eigen::VectorXd& v, const char* name) {
        if (v.size() == 0 || !v.allFinite() || v.minCoeff() < 0.0 || std::abs(v.sum() - 1.0) > 1e-9)
            throw InvalidArgument(std::string(name) + " is not a probability distribution");
    };
    check(p, "p");
    check(q, "q");
    if (p.size() != q.size()) throw InvalidArgument("distributions differ in length");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
    return std::max(0.0, kl);
}

}  // namespace augkern
