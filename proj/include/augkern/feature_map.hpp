#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"
#include "augkern/rng.hpp"

namespace augkern {

/// Fixed feature map φ: either the identity or random Fourier features
/// φ(x) = √(2/m)·cos(Wx + b) with W ~ N(0, σ⁻²) entrywise and b ~ U[0, 2π).
class FeatureMap {
public:
    enum class Kind { identity, random_fourier };

    static FeatureMap identity() { return FeatureMap{}; }

    static FeatureMap random_fourier(Eigen::Index input_dim, Eigen::Index features, double bandwidth,
                                     std::uint64_t seed) {
        if (input_dim < 1 || features < 1) throw InvalidArgument("random-fourier needs positive dimensions");
        if (!(bandwidth > 0.0)) throw InvalidArgument("random-fourier needs bandwidth > 0");
        FeatureMap f;
        f.kind_ = Kind::random_fourier;
        f.bandwidth_ = bandwidth;
        f.seed_ = seed;
        Rng rng = make_rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0 / bandwidth);
        f.weights_.resize(features, input_dim);
        for (Eigen::Index i = 0; i < features; ++i)
            for (Eigen::Index j = 0; j < input_dim; ++j) f.weights_(i, j) = normal(rng);
        f.offsets_.resize(features);
        for (Eigen::Index i = 0; i < features; ++i) f.offsets_[i] = 2.0 * std::numbers::pi * uniform01(rng);
        f.scale_ = std::sqrt(2.0 / static_cast<double>(features));
        return f;
    }

    Kind kind() const noexcept { return kind_; }

    /// Output dimension m for inputs of dimension d.
    Eigen::Index dimension(Eigen::Index input_dim) const noexcept {
        return kind_ == Kind::identity ? input_dim : weights_.rows();
    }

    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
        if (kind_ == Kind::identity) return x;
        if (x.size() != weights_.cols())
            throw InvalidArgument("feature map expects inputs of dimension " + std::to_string(weights_.cols()));
        return (scale_ * (weights_ * x + offsets_).array().cos()).matrix();
    }

    nlohmann::json to_json() const {
        if (kind_ == Kind::identity) return {{"kind", "identity"}};
        return {{"kind", "random-fourier"}, {"features", weights_.rows()}, {"bandwidth", bandwidth_}, {"seed", seed_}};
    }

private:
    Kind kind_ = Kind::identity;
    Eigen::MatrixXd weights_;
    Eigen::VectorXd offsets_;
    double scale_ = 1.0;
    double bandwidth_ = 1.0;
    std::uint64_t seed_ = 0;
};

/// {"kind": "identity"} or {"kind": "random-fourier", "features": m, "bandwidth": s, "seed": k}.
inline FeatureMap feature_map_from_json(const nlohmann::json& j, Eigen::Index input_dim,
                                        const std::string& where = "feature_map") {
    if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + ".kind", "missing");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "identity") return FeatureMap::identity();
    if (kind == "random-fourier") {
        try {
            return FeatureMap::random_fourier(input_dim, j.at("features").get<Eigen::Index>(),
                                              j.value("bandwidth", 1.0), j.value("seed", std::uint64_t{0}));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where, e.what());
        } catch (const InvalidArgument& e) {
            throw ConfigError(where, e.what());
        }
    }
    throw ConfigError(where + ".kind", "unknown feature map '" + kind + "'");
}

}  // namespace augkern
