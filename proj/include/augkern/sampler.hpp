#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"
#include "augkern/rng.hpp"

namespace augkern {

inline constexpr std::size_t kMaxSupportAtoms = 100000;

/// One transformed point with its probability.
struct Atom {
    Eigen::VectorXd z;
    double p = 0.0;
};

using Support = std::vector<Atom>;

struct IdentityTransform {};

/// Additive noise with standard deviation `sigma`.
///
/// Discretizations: `continuous` (Gaussian, sampling only), `two-point`
/// (x ± sigma·1, weight ½ each), `axis-two-point` (independent ±sigma per
/// coordinate, 2^d atoms) and `gauss-hermite` (`points`-node Gauss–Hermite
/// rule per coordinate, points^d atoms).
struct AdditiveNoise {
    enum class Discretization { continuous, two_point, axis_two_point, gauss_hermite };
    double sigma = 0.1;
    Discretization discretization = Discretization::continuous;
    int points = 3;
};

/// Circular roll of the coordinates by one of `offsets` (weights sum to 1).
struct CoordinateShift {
    std::vector<long> offsets;
    std::vector<double> weights;
};

/// Multiplies the input by a factor in [low, high]: uniform when `points` is 0,
/// otherwise an equal-weight grid of `points` factors.
struct ScaleTransform {
    double low = 1.0;
    double high = 1.0;
    int points = 0;
};

/// Circular centred moving average with a window drawn uniformly from 1..window.
struct MovingAverageBlur {
    int window = 1;
};

class TransformSampler;

/// Applies the child samplers in order.
struct CompositeTransform {
    std::vector<TransformSampler> steps;
};

/// A distribution T(x) over transformed versions of a vector input.
class TransformSampler {
public:
    using Kind = std::variant<IdentityTransform, AdditiveNoise, CoordinateShift, ScaleTransform,
                              MovingAverageBlur, CompositeTransform>;

    TransformSampler() : kind_(IdentityTransform{}) {}
    explicit TransformSampler(Kind kind) : kind_(std::move(kind)) { validate(); }

    const Kind& kind() const noexcept { return kind_; }
    std::string kind_name() const;

    /// True when support() is available (finite declared parameter grid).
    bool enumerable() const;

    /// Number of atoms support() would produce for inputs of dimension d.
    /// Saturates at kMaxSupportAtoms + 1.
    std::size_t support_size(Eigen::Index d) const;

    /// Exact finite support, ordered lexicographically on parameter indices
    /// (earlier composite steps are more significant).
    Support support(const Eigen::VectorXd& x) const;

    Eigen::VectorXd sample(const Eigen::VectorXd& x, Rng& rng) const;
    Eigen::VectorXd sample(const Eigen::VectorXd& x, std::uint64_t seed) const {
        Rng rng = make_rng(seed);
        return sample(x, rng);
    }

private:
    void validate() const;
    void enumerate(const Eigen::VectorXd& x, double p, Support& out) const;

    Kind kind_;
};

namespace detail {

inline std::size_t sat_mul(std::size_t a, std::size_t b) {
    if (a == 0 || b == 0) return 0;
    if (a > (kMaxSupportAtoms + 1) / b + 1) return kMaxSupportAtoms + 1;
    return std::min(a * b, kMaxSupportAtoms + 1);
}

inline std::size_t sat_pow(std::size_t base, Eigen::Index exp) {
    std::size_t r = 1;
    for (Eigen::Index i = 0; i < exp; ++i) r = sat_mul(r, base);
    return r;
}

/// Nodes and weights of the `k`-point Gauss–Hermite rule for N(0, 1)
/// (Golub–Welsch on the probabilists' Hermite Jacobi matrix).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int k) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    Eigen::VectorXd nodes = es.eigenvalues();
    Eigen::VectorXd weights = es.eigenvectors().row(0).transpose().array().square();
    weights /= weights.sum();
    // symmetric rule: clean the centre node and mirror for exact symmetry
    for (int i = 0; i < k / 2; ++i) {
        const double a = 0.5 * (nodes[k - 1 - i] - nodes[i]);
        const double w = 0.5 * (weights[i] + weights[k - 1 - i]);
        nodes[i] = -a;
        nodes[k - 1 - i] = a;
        weights[i] = weights[k - 1 - i] = w;
    }
    if (k % 2 == 1) nodes[k / 2] = 0.0;
    return {nodes, weights};
}

inline Eigen::VectorXd roll(const Eigen::VectorXd& x, long offset) {
    const auto d = x.size();
    Eigen::VectorXd z(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        long t = (static_cast<long>(j) + offset) % static_cast<long>(d);
        if (t < 0) t += static_cast<long>(d);
        z[t] = x[j];
    }
    return z;
}

inline Eigen::VectorXd blur(const Eigen::VectorXd& x, int window) {
    const auto d = static_cast<long>(x.size());
    Eigen::VectorXd z(x.size());
    const long left = (window - 1) / 2;
    for (long j = 0; j < d; ++j) {
        double acc = 0.0;
        for (long t = 0; t < window; ++t) {
            long k = (j - left + t) % d;
            if (k < 0) k += d;
            acc += x[k];
        }
        z[j] = acc / window;
    }
    return z;
}

inline std::size_t pick(const std::vector<double>& weights, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    // rounding: fall back to the last atom with positive weight
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return 0;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline std::string TransformSampler::kind_name() const {
    return std::visit(
        [](const auto& k) -> std::string {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, IdentityTransform>) return "identity";
            else if constexpr (std::is_same_v<K, AdditiveNoise>) return "additive-noise";
            else if constexpr (std::is_same_v<K, CoordinateShift>) return "cyclic-shift";
            else if constexpr (std::is_same_v<K, ScaleTransform>) return "scale";
            else if constexpr (std::is_same_v<K, MovingAverageBlur>) return "moving-average-blur";
            else return "composite";
        },
        kind_);
}

inline void TransformSampler::validate() const {
    std::visit(
        [](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, AdditiveNoise>) {
                if (!(k.sigma > 0.0)) throw InvalidArgument("additive-noise needs sigma > 0");
                if (k.discretization == AdditiveNoise::Discretization::gauss_hermite && k.points < 1)
                    throw InvalidArgument("gauss-hermite discretization needs points >= 1");
            } else if constexpr (std::is_same_v<K, CoordinateShift>) {
                if (k.offsets.empty() || k.offsets.size() != k.weights.size())
                    throw InvalidArgument("cyclic-shift needs matching non-empty offsets and weights");
                double total = 0.0;
                for (double w : k.weights) {
                    if (!(w >= 0.0)) throw InvalidArgument("cyclic-shift weights must be nonnegative");
                    total += w;
                }
                if (std::abs(total - 1.0) > 1e-12)
                    throw InvalidArgument("cyclic-shift weights must sum to 1");
            } else if constexpr (std::is_same_v<K, ScaleTransform>) {
                if (!(k.low <= k.high)) throw InvalidArgument("scale needs low <= high");
                if (k.points < 0) throw InvalidArgument("scale points must be >= 0");
            } else if constexpr (std::is_same_v<K, MovingAverageBlur>) {
                if (k.window < 1) throw InvalidArgument("moving-average-blur needs window >= 1");
            } else if constexpr (std::is_same_v<K, CompositeTransform>) {
                if (k.steps.empty()) throw InvalidArgument("composite needs at least one step");
            }
        },
        kind_);
}

inline bool TransformSampler::enumerable() const {
    return std::visit(
        [](const auto& k) -> bool {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, AdditiveNoise>)
                return k.discretization != AdditiveNoise::Discretization::continuous;
            else if constexpr (std::is_same_v<K, ScaleTransform>)
                return k.points > 0 || k.low == k.high;
            else if constexpr (std::is_same_v<K, CompositeTransform>) {
                for (const auto& s : k.steps)
                    if (!s.enumerable()) return false;
                return true;
            } else
                return true;
        },
        kind_);
}

inline std::size_t TransformSampler::support_size(Eigen::Index d) const {
    return std::visit(
        [d](const auto& k) -> std::size_t {
            using K = std::decay_t<decltype(k)>;
            using D = AdditiveNoise::Discretization;
            if constexpr (std::is_same_v<K, AdditiveNoise>) {
                switch (k.discretization) {
                    case D::two_point: return 2;
                    case D::axis_two_point: return detail::sat_pow(2, d);
                    case D::gauss_hermite: return detail::sat_pow(static_cast<std::size_t>(k.points), d);
                    default: return kMaxSupportAtoms + 1;
                }
            } else if constexpr (std::is_same_v<K, CoordinateShift>)
                return k.offsets.size();
            else if constexpr (std::is_same_v<K, ScaleTransform>)
                return k.points > 0 ? static_cast<std::size_t>(k.points) : 1;
            else if constexpr (std::is_same_v<K, MovingAverageBlur>)
                return static_cast<std::size_t>(k.window);
            else if constexpr (std::is_same_v<K, CompositeTransform>) {
                std::size_t n = 1;
                for (const auto& s : k.steps) n = detail::sat_mul(n, s.support_size(d));
                return n;
            } else
                return 1;
        },
        kind_);
}

inline void TransformSampler::enumerate(const Eigen::VectorXd& x, double p, Support& out) const {
    using D = AdditiveNoise::Discretization;
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, IdentityTransform>) {
                out.push_back({x, p});
            } else if constexpr (std::is_same_v<K, AdditiveNoise>) {
                const auto d = x.size();
                if (k.discretization == D::two_point) {
                    out.push_back({(x.array() + k.sigma).matrix(), 0.5 * p});
                    out.push_back({(x.array() - k.sigma).matrix(), 0.5 * p});
                    return;
                }
                Eigen::VectorXd nodes, weights;
                if (k.discretization == D::axis_two_point) {
                    nodes = Eigen::Vector2d(k.sigma, -k.sigma);
                    weights = Eigen::Vector2d(0.5, 0.5);
                } else {
                    auto [n, w] = detail::gauss_hermite(k.points);
                    nodes = k.sigma * n;
                    weights = w;
                }
                const auto q = nodes.size();
                std::vector<Eigen::Index> idx(static_cast<std::size_t>(d), 0);
                for (;;) {
                    Atom a{x, p};
                    for (Eigen::Index c = 0; c < d; ++c) {
                        a.z[c] += nodes[idx[static_cast<std::size_t>(c)]];
                        a.p *= weights[idx[static_cast<std::size_t>(c)]];
                    }
                    out.push_back(std::move(a));
                    Eigen::Index c = d - 1;
                    while (c >= 0 && ++idx[static_cast<std::size_t>(c)] == q) idx[static_cast<std::size_t>(c--)] = 0;
                    if (c < 0) break;
                }
            } else if constexpr (std::is_same_v<K, CoordinateShift>) {
                for (std::size_t i = 0; i < k.offsets.size(); ++i)
                    out.push_back({detail::roll(x, k.offsets[i]), p * k.weights[i]});
            } else if constexpr (std::is_same_v<K, ScaleTransform>) {
                if (k.points == 0) {
                    out.push_back({k.low * x, p});
                    return;
                }
                for (int i = 0; i < k.points; ++i) {
                    const double f = k.points == 1 ? 0.5 * (k.low + k.high)
                                                   : k.low + (k.high - k.low) * i / (k.points - 1);
                    out.push_back({f * x, p / k.points});
                }
            } else if constexpr (std::is_same_v<K, MovingAverageBlur>) {
                for (int w = 1; w <= k.window; ++w) out.push_back({detail::blur(x, w), p / k.window});
            } else {
                Support current{{x, p}};
                for (const auto& step : k.steps) {
                    Support next;
                    for (const auto& a : current) step.enumerate(a.z, a.p, next);
                    current = std::move(next);
                }
                for (auto& a : current) out.push_back(std::move(a));
            }
        },
        kind_);
}

inline Support TransformSampler::support(const Eigen::VectorXd& x) const {
    if (!enumerable())
        throw InvalidArgument("sampler '" + kind_name() + "' has no finite declared support");
    if (support_size(x.size()) > kMaxSupportAtoms)
        throw InvalidArgument("sampler support exceeds " + std::to_string(kMaxSupportAtoms) +
                              " atoms; use Monte-Carlo estimation");
    Support out;
    out.reserve(support_size(x.size()));
    enumerate(x, 1.0, out);
    return out;
}

inline Eigen::VectorXd TransformSampler::sample(const Eigen::VectorXd& x, Rng& rng) const {
    using D = AdditiveNoise::Discretization;
    return std::visit(
        [&](const auto& k) -> Eigen::VectorXd {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, IdentityTransform>) {
                return x;
            } else if constexpr (std::is_same_v<K, AdditiveNoise>) {
                Eigen::VectorXd z = x;
                switch (k.discretization) {
                    case D::continuous: {
                        std::normal_distribution<double> normal(0.0, k.sigma);
                        for (Eigen::Index c = 0; c < z.size(); ++c) z[c] += normal(rng);
                        break;
                    }
                    case D::two_point:
                        z.array() += uniform01(rng) < 0.5 ? k.sigma : -k.sigma;
                        break;
                    case D::axis_two_point:
                        for (Eigen::Index c = 0; c < z.size(); ++c)
                            z[c] += uniform01(rng) < 0.5 ? k.sigma : -k.sigma;
                        break;
                    case D::gauss_hermite: {
                        auto [nodes, weights] = detail::gauss_hermite(k.points);
                        const auto w = detail::to_std(weights);
                        for (Eigen::Index c = 0; c < z.size(); ++c)
                            z[c] += k.sigma * nodes[static_cast<Eigen::Index>(detail::pick(w, rng))];
                        break;
                    }
                }
                return z;
            } else if constexpr (std::is_same_v<K, CoordinateShift>) {
                return detail::roll(x, k.offsets[detail::pick(k.weights, rng)]);
            } else if constexpr (std::is_same_v<K, ScaleTransform>) {
                if (k.points == 0) return (k.low + (k.high - k.low) * uniform01(rng)) * x;
                const auto i = static_cast<int>(uniform01(rng) * k.points);
                const double f = k.points == 1 ? 0.5 * (k.low + k.high)
                                               : k.low + (k.high - k.low) * i / (k.points - 1);
                return f * x;
            } else if constexpr (std::is_same_v<K, MovingAverageBlur>) {
                const int w = 1 + static_cast<int>(uniform01(rng) * k.window);
                return detail::blur(x, w);
            } else {
                Eigen::VectorXd z = x;
                for (const auto& step : k.steps) z = step.sample(z, rng);
                return z;
            }
        },
        kind_);
}

// Convenience constructors.
inline TransformSampler identity_sampler() { return TransformSampler{}; }

inline TransformSampler noise_sampler(double sigma, AdditiveNoise::Discretization disc,
                                      int points = 3) {
    return TransformSampler(AdditiveNoise{sigma, disc, points});
}

inline TransformSampler shift_sampler(std::vector<long> offsets, std::vector<double> weights) {
    return TransformSampler(CoordinateShift{std::move(offsets), std::move(weights)});
}

inline TransformSampler composite_sampler(std::vector<TransformSampler> steps) {
    return TransformSampler(CompositeTransform{std::move(steps)});
}

nlohmann::json to_json(const TransformSampler& s);

/// Builds a sampler from {"kind": ..., "params": {...}}; throws ConfigError.
inline TransformSampler make_sampler(const nlohmann::json& j, const std::string& where = "sampler") {
    if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
        throw ConfigError(where + ".kind", "expected a string");
    const auto kind = j.at("kind").get<std::string>();
    const nlohmann::json params = j.value("params", nlohmann::json::object());
    try {
        if (kind == "identity") return identity_sampler();
        if (kind == "additive-noise") {
            AdditiveNoise n;
            n.sigma = params.at("sigma").get<double>();
            const auto disc = params.value("discretization", std::string("continuous"));
            using D = AdditiveNoise::Discretization;
            if (disc == "continuous") n.discretization = D::continuous;
            else if (disc == "two-point") n.discretization = D::two_point;
            else if (disc == "axis-two-point") n.discretization = D::axis_two_point;
            else if (disc == "gauss-hermite") n.discretization = D::gauss_hermite;
            else throw ConfigError(where + ".params.discretization", "unknown discretization '" + disc + "'");
            n.points = params.value("points", 3);
            return TransformSampler(n);
        }
        if (kind == "cyclic-shift") {
            CoordinateShift s;
            s.offsets = params.at("offsets").get<std::vector<long>>();
            if (params.contains("weights")) s.weights = params.at("weights").get<std::vector<double>>();
            else s.weights.assign(s.offsets.size(), 1.0 / static_cast<double>(s.offsets.size()));
            return TransformSampler(s);
        }
        if (kind == "scale")
            return TransformSampler(ScaleTransform{params.at("low").get<double>(),
                                                   params.at("high").get<double>(),
                                                   params.value("points", 0)});
        if (kind == "moving-average-blur")
            return TransformSampler(MovingAverageBlur{params.at("window").get<int>()});
        if (kind == "composite") {
            CompositeTransform c;
            const auto& steps = params.at("steps");
            for (std::size_t i = 0; i < steps.size(); ++i)
                c.steps.push_back(make_sampler(steps[i], where + ".params.steps[" + std::to_string(i) + "]"));
            return TransformSampler(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ".params", std::string("invalid parameters: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(where + ".params", e.what());
    }
    throw ConfigError(where + ".kind", "unknown sampler kind '" + kind + "'");
}

inline nlohmann::json to_json(const TransformSampler& s) {
    using D = AdditiveNoise::Discretization;
    nlohmann::json params = nlohmann::json::object();
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, AdditiveNoise>) {
                static const char* names[] = {"continuous", "two-point", "axis-two-point", "gauss-hermite"};
                params = {{"sigma", k.sigma}, {"discretization", names[static_cast<int>(k.discretization)]}};
                if (k.discretization == D::gauss_hermite) params["points"] = k.points;
            } else if constexpr (std::is_same_v<K, CoordinateShift>) {
                params = {{"offsets", k.offsets}, {"weights", k.weights}};
            } else if constexpr (std::is_same_v<K, ScaleTransform>) {
                params = {{"low", k.low}, {"high", k.high}, {"points", k.points}};
            } else if constexpr (std::is_same_v<K, MovingAverageBlur>) {
                params = {{"window", k.window}};
            } else if constexpr (std::is_same_v<K, CompositeTransform>) {
                nlohmann::json steps = nlohmann::json::array();
                for (const auto& st : k.steps) steps.push_back(to_json(st));
                params = {{"steps", steps}};
            }
        },
        s.kind());
    return {{"kind", s.kind_name()}, {"params", params}};
}

/// Exact finite support of T(x); probabilities sum to 1.
inline Support enumerate_support(const TransformSampler& sampler, const Eigen::VectorXd& x) {
    return sampler.support(x);
}

}  // namespace augkern
