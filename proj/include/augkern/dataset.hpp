#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"
#include "augkern/rng.hpp"

namespace augkern {

/// Training inputs with integer labels.
struct Dataset {
    std::vector<Eigen::VectorXd> inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return inputs.size(); }
    Eigen::Index dimension() const { return inputs.empty() ? 0 : inputs.front().size(); }

    void validate() const {
        if (inputs.empty()) throw InvalidArgument("dataset is empty");
        if (inputs.size() != labels.size()) throw InvalidArgument("dataset inputs and labels differ in length");
        for (const auto& x : inputs)
            if (x.size() != inputs.front().size()) throw InvalidArgument("dataset inputs differ in dimension");
    }

    Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset out;
        for (auto i : idx) {
            out.inputs.push_back(inputs.at(i));
            out.labels.push_back(labels.at(i));
        }
        return out;
    }
};

/// Parameters of the two-class Gaussian mixture generator.
///
/// Labels alternate +1, −1. Class means are ±(separation/2)·u with
/// u = (1, −1, 1, …)/√dim, so a cyclic coordinate shift by one maps one class
/// mean onto the other for even dim. Each of the `points / replicates` base
/// draws (std `spread`) is repeated `replicates` times with extra jitter of
/// std `jitter`.
struct MixtureParams {
    std::size_t points = 200;
    Eigen::Index dim = 2;
    double separation = 2.0;
    double spread = 1.0;
    std::size_t replicates = 1;
    double jitter = 0.0;
    std::uint64_t seed = 0;
};

inline Dataset two_class_mixture(const MixtureParams& p) {
    if (p.points < 2 || p.dim < 1 || p.replicates < 1)
        throw InvalidArgument("mixture needs points >= 2, dim >= 1, replicates >= 1");
    Rng rng = make_rng(p.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd u(p.dim);
    for (Eigen::Index j = 0; j < p.dim; ++j) u[j] = (j % 2 == 0 ? 1.0 : -1.0);
    u /= std::sqrt(static_cast<double>(p.dim));
    Dataset d;
    Eigen::VectorXd base;
    for (std::size_t i = 0; i < p.points; ++i) {
        const int y = (i / p.replicates) % 2 == 0 ? 1 : -1;
        if (i % p.replicates == 0) {
            base = (0.5 * p.separation * y) * u;
            for (Eigen::Index j = 0; j < p.dim; ++j) base[j] += p.spread * normal(rng);
        }
        Eigen::VectorXd x = base;
        if (p.jitter > 0.0)
            for (Eigen::Index j = 0; j < p.dim; ++j) x[j] += p.jitter * normal(rng);
        d.inputs.push_back(std::move(x));
        d.labels.push_back(y);
    }
    return d;
}

inline MixtureParams mixture_from_json(const nlohmann::json& j) {
    MixtureParams p;
    p.points = j.value("points", p.points);
    p.dim = j.value("dim", p.dim);
    p.separation = j.value("separation", p.separation);
    p.spread = j.value("spread", p.spread);
    p.replicates = j.value("replicates", p.replicates);
    p.jitter = j.value("jitter", p.jitter);
    p.seed = j.value("seed", p.seed);
    return p;
}

/// {"inputs": [[...], ...], "labels": [...]} or {"synthetic": {mixture params}}.
inline Dataset dataset_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("dataset", "expected an object");
    Dataset d;
    try {
        if (j.contains("synthetic")) {
            d = two_class_mixture(mixture_from_json(j.at("synthetic")));
        } else {
            for (const auto& row : j.at("inputs")) {
                auto v = row.get<std::vector<double>>();
                d.inputs.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
            }
            d.labels = j.at("labels").get<std::vector<int>>();
        }
        d.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("dataset", e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError("dataset", e.what());
    }
    return d;
}

}  // namespace augkern
