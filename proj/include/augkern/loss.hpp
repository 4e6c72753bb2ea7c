#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"

namespace augkern {

/// Scalar loss l(x; y) or multinomial cross-entropy over class scores.
struct LossModel {
    enum class Kind { logistic, squared, multinomial };
    Kind kind = Kind::logistic;
    int num_classes = 2;

    static LossModel logistic() { return {Kind::logistic, 2}; }
    static LossModel squared() { return {Kind::squared, 2}; }
    static LossModel multinomial(int classes) {
        if (classes < 2) throw InvalidArgument("multinomial loss needs at least 2 classes");
        return {Kind::multinomial, classes};
    }

    bool scalar() const noexcept { return kind != Kind::multinomial; }
    std::string name() const {
        switch (kind) {
            case Kind::logistic: return "logistic";
            case Kind::squared: return "squared";
            default: return "multinomial-ce";
        }
    }

    void check_label(int y) const {
        if (scalar()) {
            if (y != 1 && y != -1)
                throw InvalidArgument(name() + " loss needs labels in {-1, 1}, got " + std::to_string(y));
        } else if (y < 0 || y >= num_classes) {
            throw InvalidArgument("multinomial label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
};

inline LossModel loss_from_json(const nlohmann::json& j, const std::string& where = "loss") {
    if (j.is_string()) {
        const auto k = j.get<std::string>();
        if (k == "logistic") return LossModel::logistic();
        if (k == "squared") return LossModel::squared();
        throw ConfigError(where, "unknown loss '" + k + "'");
    }
    if (!j.is_object() || !j.contains("kind")) throw ConfigError(where, "expected a loss name or object");
    const auto k = j.at("kind").get<std::string>();
    if (k == "multinomial-ce") {
        try {
            return LossModel::multinomial(j.value("num_classes", 2));
        } catch (const InvalidArgument& e) {
            throw ConfigError(where + ".num_classes", e.what());
        }
    }
    return loss_from_json(j.at("kind"), where);
}

/// Value and first two derivatives of a scalar loss.
struct ScalarLoss {
    double value = 0.0;
    double first = 0.0;
    double second = 0.0;
};

struct MultinomialLoss {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

namespace detail {

inline double sech2(double t) {
    const double c = std::cosh(t);
    return 1.0 / (c * c);
}

inline double softplus(double t) {  // log(1 + e^t)
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

}  // namespace detail

/// l, l′, l″ at score x. Logistic: log(1+e^{−yx}), −y/2 + (y/2)tanh(yx/2),
/// ¼sech²(x/2). Squared: (x−y)², 2(x−y), 2.
inline ScalarLoss loss_eval(const LossModel& loss, double x, int y) {
    loss.check_label(y);
    const double yd = static_cast<double>(y);
    switch (loss.kind) {
        case LossModel::Kind::logistic:
            return {detail::softplus(-yd * x), -yd / 2.0 + (yd / 2.0) * std::tanh(yd * x / 2.0),
                    0.25 * detail::sech2(x / 2.0)};
        case LossModel::Kind::squared:
            return {(x - yd) * (x - yd), 2.0 * (x - yd), 2.0};
        default:
            throw InvalidArgument("multinomial loss needs a score vector");
    }
}

/// l‴, used by the gradient of the variance penalty.
inline double loss_third(const LossModel& loss, double x) {
    if (loss.kind == LossModel::Kind::logistic)
        return -0.25 * detail::sech2(x / 2.0) * std::tanh(x / 2.0);
    return 0.0;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
    const Eigen::ArrayXd e = (x.array() - x.maxCoeff()).exp();
    return (e / e.sum()).matrix();
}

/// Cross-entropy −(x_y − log Σ exp x_j) with gradient p − e_y and Hessian diag(p) − ppᵀ.
inline MultinomialLoss loss_eval(const LossModel& loss, const Eigen::VectorXd& x, int y) {
    if (loss.kind != LossModel::Kind::multinomial) {
        if (x.size() != 1) throw InvalidArgument(loss.name() + " loss takes a single score");
        const auto s = loss_eval(loss, x[0], y);
        return {s.value, Eigen::VectorXd::Constant(1, s.first), Eigen::MatrixXd::Constant(1, 1, s.second)};
    }
    loss.check_label(y);
    if (x.size() != loss.num_classes) throw InvalidArgument("score vector length must equal num_classes");
    const double mx = x.maxCoeff();
    const double lse = mx + std::log((x.array() - mx).exp().sum());
    MultinomialLoss out;
    out.value = lse - x[y];
    const Eigen::VectorXd p = softmax(x);
    out.gradient = p;
    out.gradient[y] -= 1.0;
    out.hessian = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    return out;
}

}  // namespace augkern
