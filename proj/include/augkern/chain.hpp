#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/augmentation.hpp"
#include "augkern/error.hpp"
#include "augkern/io.hpp"
#include "augkern/rng.hpp"

namespace augkern {

/// Largest state space accepted by the dense chain operations.
inline constexpr std::size_t kMaxDenseStates = 5000;

/// A base augmentation together with its rate.
struct RatedAugmentation {
    AugmentationMatrix matrix;
    double rate = 1.0;
};

/// A training example the chain can retract to, with its retraction weight.
struct Retraction {
    std::size_t state = 0;
    double gamma = 1.0;
};

/// The full augmentation process: base augmentations with rates plus the
/// retraction distribution over training states.
class ChainSpec {
public:
    ChainSpec(SpacePtr space, std::vector<RatedAugmentation> augmentations,
              std::vector<Retraction> dataset)
        : space_(std::move(space)), augs_(std::move(augmentations)), dataset_(std::move(dataset)) {
        if (!space_ || space_->size() == 0) throw InvalidArgument("chain needs a non-empty state space");
        const auto n = space_->size();
        if (n > kMaxDenseStates)
            throw InvalidArgument("state space has " + std::to_string(n) + " states; dense operations are capped at " +
                                  std::to_string(kMaxDenseStates));
        if (augs_.empty()) throw InvalidArgument("chain needs at least one augmentation");
        if (dataset_.empty()) throw InvalidArgument("chain needs at least one training state");
        const auto ids = space_->ids();
        const auto sz = static_cast<Eigen::Index>(n);
        combined_ = Eigen::MatrixXd::Zero(sz, sz);
        for (std::size_t i = 0; i < augs_.size(); ++i) {
            const auto& a = augs_[i];
            if (a.matrix.space_ptr() != space_ && a.matrix.space().ids() != ids)
                throw InvalidArgument("augmentation " + std::to_string(i) + " is defined on a different space");
            if (!(a.rate > 0.0) || !std::isfinite(a.rate))
                throw InvalidArgument("augmentation " + std::to_string(i) +
                                      " has rate <= 0; use a small positive rate to probe the limit");
            beta_ += a.rate;
            combined_ += a.rate * a.matrix.matrix();
        }
        rho_ = Eigen::VectorXd::Zero(sz);
        double total = 0.0;
        for (const auto& r : dataset_) {
            if (r.state >= n) throw InvalidArgument("training state index out of range");
            if (!(r.gamma >= 0.0)) throw InvalidArgument("retraction weights must be nonnegative");
            rho_[static_cast<Eigen::Index>(r.state)] += r.gamma;
            total += r.gamma;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw InvalidArgument("retraction weights must sum to 1 (got " + io::format_double(total) + ")");
    }

    const StateSpace& space() const noexcept { return *space_; }
    const SpacePtr& space_ptr() const noexcept { return space_; }
    const std::vector<RatedAugmentation>& augmentations() const noexcept { return augs_; }
    const std::vector<Retraction>& dataset() const noexcept { return dataset_; }
    std::size_t size() const noexcept { return space_->size(); }

    /// Total augmentation rate β = Σβᵢ.
    double beta() const noexcept { return beta_; }
    /// Rate-weighted augmentation operator A = Σβᵢ Aᵢ.
    const Eigen::MatrixXd& combined() const noexcept { return combined_; }
    /// Retraction distribution ρ = Σγⱼ e_{zⱼ}.
    const Eigen::VectorXd& rho() const noexcept { return rho_; }

    bool label_preserving() const {
        return std::all_of(augs_.begin(), augs_.end(),
                           [](const auto& a) { return a.matrix.label_preserving(); });
    }

    /// Same chain with every rate multiplied by `factor`.
    ChainSpec scaled_rates(double factor) const {
        auto augs = augs_;
        for (auto& a : augs) a.rate *= factor;
        return ChainSpec(space_, std::move(augs), dataset_);
    }

private:
    SpacePtr space_;
    std::vector<RatedAugmentation> augs_;
    std::vector<Retraction> dataset_;
    double beta_ = 0.0;
    Eigen::MatrixXd combined_;
    Eigen::VectorXd rho_;
};

/// Probability vector over the states of a space.
struct DistributionVector {
    Eigen::VectorXd probs;

    std::size_t size() const noexcept { return static_cast<std::size_t>(probs.size()); }
    double operator[](std::size_t i) const { return probs[static_cast<Eigen::Index>(i)]; }
};

/// Validates a computed distribution: entries in [-1e-12, 0) are clamped to 0
/// and the vector renormalized; anything more negative, or a sum off by more
/// than 1e-10, is an error.
inline DistributionVector make_distribution(Eigen::VectorXd v) {
    if (!v.allFinite()) throw NumericalError("distribution has non-finite entries");
    if (v.size() > 0 && v.minCoeff() < -1e-12)
        throw NumericalError("distribution has entry " + io::format_double(v.minCoeff()) + " < -1e-12");
    const double s = v.sum();
    if (std::abs(s - 1.0) > 1e-10)
        throw NumericalError("distribution sums to " + io::format_double(s));
    if (v.size() > 0 && v.minCoeff() < 0.0) {
        v = v.cwiseMax(0.0);
        v /= v.sum();
    }
    return {std::move(v)};
}

/// R = (A + 1ρᵀ)/(β+1).
inline Eigen::MatrixXd transition_matrix(const ChainSpec& spec) {
    Eigen::MatrixXd r = spec.combined();
    r.rowwise() += spec.rho().transpose();
    return r / (spec.beta() + 1.0);
}

/// (I(β+1) − A), the matrix whose inverse carries the stationary law.
inline Eigen::MatrixXd resolvent_operator(const ChainSpec& spec) {
    const auto n = static_cast<Eigen::Index>(spec.size());
    return Eigen::MatrixXd::Identity(n, n) * (spec.beta() + 1.0) - spec.combined();
}

/// π = ρᵀ(I(β+1) − A)⁻¹ by a dense LU solve of the transposed system.
inline DistributionVector stationary_distribution(const ChainSpec& spec) {
    const Eigen::MatrixXd m = resolvent_operator(spec).transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    Eigen::VectorXd x = lu.solve(spec.rho());
    if (!x.allFinite() || (m * x - spec.rho()).lpNorm<Eigen::Infinity>() > 1e-9)
        throw NumericalError("stationary solve failed; the chain specification is malformed");
    return make_distribution(std::move(x));
}

/// Distribution of the chain after n steps started from ρ:
/// πₙ = vₙ + (β+1)⁻¹ Σ_{i<n} vᵢ with vᵢ = ρᵀ(A/(β+1))ⁱ.
inline DistributionVector finite_time_distribution(const ChainSpec& spec, std::size_t n) {
    const double b1 = spec.beta() + 1.0;
    const Eigen::MatrixXd scaled_t = spec.combined().transpose() / b1;
    Eigen::VectorXd v = spec.rho();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
    for (std::size_t i = 0; i < n; ++i) {
        acc += v;
        v = scaled_t * v;
    }
    return make_distribution(v + acc / b1);
}

/// ℓ₂ distance bound (β/(β+1))ⁿ(1 + 1/(β+1)²) between πₙ and π.
inline double mixing_bound(double beta, std::size_t n) {
    if (!(beta > 0.0)) throw InvalidArgument("mixing_bound needs beta > 0");
    const double b1 = beta + 1.0;
    return std::pow(beta / b1, static_cast<double>(n)) * (1.0 + 1.0 / (b1 * b1));
}

/// Result of check_surjectivity.
struct Reachability {
    bool surjective = true;
    std::vector<std::size_t> unreachable;
};

/// Breadth-first reachability from the training states through edges with
/// positive probability in A.
inline Reachability check_surjectivity(const ChainSpec& spec) {
    const auto n = spec.size();
    const auto& a = spec.combined();
    std::vector<char> seen(n, 0);
    std::deque<std::size_t> queue;
    for (const auto& r : spec.dataset())
        if (r.gamma > 0.0 && !seen[r.state]) {
            seen[r.state] = 1;
            queue.push_back(r.state);
        }
    while (!queue.empty()) {
        const auto u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n; ++v)
            if (!seen[v] && a(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) > 0.0) {
                seen[v] = 1;
                queue.push_back(v);
            }
    }
    Reachability out;
    for (std::size_t v = 0; v < n; ++v)
        if (!seen[v]) out.unreachable.push_back(v);
    out.surjective = out.unreachable.empty();
    return out;
}

/// Draws transitions of the combined chain: with probability 1/(β+1) a
/// retraction to ρ, otherwise augmentation i with probability βᵢ/(β+1).
class ChainSampler {
public:
    explicit ChainSampler(const ChainSpec& spec) : n_(spec.size()) {
        const double b1 = spec.beta() + 1.0;
        double acc = 1.0 / b1;
        for (const auto& a : spec.augmentations()) {
            acc += a.rate / b1;
            move_cdf_.push_back(acc);
            std::vector<double> cdf(n_ * n_);
            const auto& m = a.matrix.matrix();
            for (std::size_t i = 0; i < n_; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n_; ++j) {
                    s += m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    cdf[i * n_ + j] = s;
                }
                for (std::size_t j = n_; j-- > 0;)
                    if (m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0) {
                        cdf[i * n_ + j] = std::numeric_limits<double>::infinity();
                        break;
                    }
            }
            row_cdfs_.push_back(std::move(cdf));
        }
        move_cdf_.back() = std::numeric_limits<double>::infinity();
        retract_cdf_.resize(n_);
        double s = 0.0;
        for (std::size_t j = 0; j < n_; ++j) {
            s += spec.rho()[static_cast<Eigen::Index>(j)];
            retract_cdf_[j] = s;
        }
        retract_cdf_ = trim(retract_cdf_, spec.rho());
        retract_prob_ = 1.0 / b1;
    }

    std::size_t initial(Rng& rng) const { return search(retract_cdf_.data(), uniform01(rng)); }

    /// Next state; `retracted` reports the move type.
    std::size_t step(std::size_t state, Rng& rng, bool& retracted) const {
        const double u = uniform01(rng);
        if (u < retract_prob_) {
            retracted = true;
            return initial(rng);
        }
        retracted = false;
        std::size_t k = 0;
        while (u >= move_cdf_[k]) ++k;
        return search(row_cdfs_[k].data() + state * n_, uniform01(rng));
    }

private:
    // Pins the last positive-mass entry to +inf so rounding never lands on a zero-mass state.
    static std::vector<double> trim(std::vector<double> cdf, const Eigen::VectorXd& p) {
        for (std::size_t j = cdf.size(); j-- > 0;)
            if (p[static_cast<Eigen::Index>(j)] > 0.0) {
                cdf[j] = std::numeric_limits<double>::infinity();
                break;
            }
        return cdf;
    }

    std::size_t search(const double* cdf, double u) const {
        return static_cast<std::size_t>(std::upper_bound(cdf, cdf + n_, u) - cdf);
    }

    std::size_t n_;
    double retract_prob_ = 0.0;
    std::vector<double> move_cdf_;
    std::vector<std::vector<double>> row_cdfs_;
    std::vector<double> retract_cdf_;
};

struct Trajectory {
    std::vector<std::size_t> states;  // initial state followed by one state per step
    std::size_t retractions = 0;
};

/// Simulates `steps` transitions starting from a draw of ρ. Deterministic in `seed`.
inline Trajectory sample_trajectory(const ChainSpec& spec, std::uint64_t seed, std::size_t steps) {
    if (steps < 1) throw InvalidArgument("sample_trajectory needs steps >= 1");
    ChainSampler sampler(spec);
    Rng rng = make_rng(seed);
    Trajectory t;
    t.states.reserve(steps + 1);
    t.states.push_back(sampler.initial(rng));
    for (std::size_t s = 0; s < steps; ++s) {
        bool retracted = false;
        t.states.push_back(sampler.step(t.states.back(), rng, retracted));
        t.retractions += retracted ? 1 : 0;
    }
    return t;
}

/// Loads {"space": ..., "augmentations": [...], "dataset": [...]}. Each
/// augmentation gives "beta" and one of "matrix_csv" (relative to base_dir),
/// "matrix" (inline rows) or "build" (a finite augmentation description).
inline ChainSpec chain_spec_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("chain", "expected an object");
    if (!j.contains("space")) throw ConfigError("space", "missing");
    SpacePtr space;
    try {
        space = std::make_shared<const StateSpace>(state_space_from_json(j.at("space")));
    } catch (const InvalidArgument& e) {
        throw ConfigError("space", e.what());
    }
    if (!j.contains("augmentations") || !j.at("augmentations").is_array())
        throw ConfigError("augmentations", "expected an array");
    std::vector<RatedAugmentation> augs;
    const auto& arr = j.at("augmentations");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string where = "augmentations[" + std::to_string(i) + "]";
        const auto& a = arr[i];
        if (!a.contains("beta") || !a.at("beta").is_number())
            throw ConfigError(where + ".beta", "expected a number");
        try {
            if (a.contains("matrix_csv")) {
                auto path = std::filesystem::path(a.at("matrix_csv").get<std::string>());
                if (path.is_relative()) path = base_dir / path;
                augs.push_back({read_augmentation_csv(space, path.string()), a.at("beta").get<double>()});
            } else if (a.contains("matrix")) {
                const auto rows = a.at("matrix").get<std::vector<std::vector<double>>>();
                const auto n = static_cast<Eigen::Index>(rows.size());
                Eigen::MatrixXd m(n, n);
                for (Eigen::Index r = 0; r < n; ++r) {
                    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != n)
                        throw ConfigError(where + ".matrix", "matrix must be square");
                    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
                }
                augs.push_back({AugmentationMatrix(space, std::move(m)), a.at("beta").get<double>()});
            } else if (a.contains("build")) {
                augs.push_back({build_finite_augmentation(space, finite_augmentation_from_json(a.at("build"), where + ".build")),
                                a.at("beta").get<double>()});
            } else {
                throw ConfigError(where, "needs one of matrix_csv, matrix, build");
            }
        } catch (const InvalidArgument& e) {
            throw ConfigError(where, e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where, e.what());
        }
    }
    if (!j.contains("dataset") || !j.at("dataset").is_array() || j.at("dataset").empty())
        throw ConfigError("dataset", "expected a non-empty array");
    std::vector<Retraction> data;
    const auto& ds = j.at("dataset");
    const bool uniform = std::none_of(ds.begin(), ds.end(), [](const auto& d) { return d.contains("gamma"); });
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string where = "dataset[" + std::to_string(i) + "]";
        if (!ds[i].contains("state") || !ds[i].at("state").is_string())
            throw ConfigError(where + ".state", "expected a state id");
        auto idx = space->find(ds[i].at("state").get<std::string>());
        if (!idx) throw ConfigError(where + ".state", "unknown state id");
        double g = 1.0 / static_cast<double>(ds.size());
        if (!uniform) {
            if (!ds[i].contains("gamma") || !ds[i].at("gamma").is_number())
                throw ConfigError(where + ".gamma", "expected a number");
            g = ds[i].at("gamma").get<double>();
        }
        data.push_back({*idx, g});
    }
    try {
        return ChainSpec(space, std::move(augs), std::move(data));
    } catch (const InvalidArgument& e) {
        throw ConfigError("chain", e.what());
    }
}

/// CSV with columns state_id,probability.
inline void write_distribution_csv(std::ostream& os, const StateSpace& space,
                                   const DistributionVector& d) {
    os << "state_id,probability\n";
    for (std::size_t i = 0; i < space.size(); ++i)
        os << space[i].id << ',' << io::format_double(d[i]) << '\n';
}

}  // namespace augkern
