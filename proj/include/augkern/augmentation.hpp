#pragma once

#include <cmath>
#include <limits>
#include <type_traits>
#include <cstddef>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"
#include "augkern/io.hpp"
#include "augkern/state_space.hpp"

namespace augkern {

using SpacePtr = std::shared_ptr<const StateSpace>;

inline constexpr double kStochasticTol = 1e-12;

/// Row-stochastic transition matrix over a finite state space: one base
/// augmentation. Immutable once built.
class AugmentationMatrix {
public:
    AugmentationMatrix(SpacePtr space, Eigen::MatrixXd matrix)
        : space_(std::move(space)), matrix_(std::move(matrix)) {
        if (!space_) throw InvalidArgument("augmentation matrix needs a state space");
        const auto n = static_cast<Eigen::Index>(space_->size());
        if (matrix_.rows() != n || matrix_.cols() != n)
            throw InvalidArgument("augmentation matrix is " + std::to_string(matrix_.rows()) + "x" +
                                  std::to_string(matrix_.cols()) + " but the space has " +
                                  std::to_string(n) + " states");
        for (Eigen::Index i = 0; i < n; ++i) {
            if ((matrix_.row(i).array() < 0.0).any() || !matrix_.row(i).allFinite())
                throw InvalidArgument("augmentation matrix row " + std::to_string(i) +
                                      " has a negative or non-finite entry");
            const double s = matrix_.row(i).sum();
            if (std::abs(s - 1.0) > kStochasticTol)
                throw InvalidArgument("augmentation matrix row " + std::to_string(i) +
                                      " sums to " + io::format_double(s));
        }
        label_preserving_ = true;
        for (Eigen::Index i = 0; i < n && label_preserving_; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (matrix_(i, j) != 0.0 &&
                    (*space_)[static_cast<std::size_t>(i)].label != (*space_)[static_cast<std::size_t>(j)].label) {
                    label_preserving_ = false;
                    break;
                }
    }

    const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
    const StateSpace& space() const noexcept { return *space_; }
    const SpacePtr& space_ptr() const noexcept { return space_; }
    std::size_t size() const noexcept { return space_->size(); }

    /// True when no probability mass crosses label blocks (exact zeros).
    bool label_preserving() const noexcept { return label_preserving_; }
    bool symmetric() const { return matrix_ == matrix_.transpose(); }

private:
    SpacePtr space_;
    Eigen::MatrixXd matrix_;
    bool label_preserving_ = true;
};

/// Move by one of the integer grid offsets (with the given weights), wrapping
/// around each axis. 1-D grids use single-element offsets.
struct CyclicShift {
    std::vector<std::vector<long>> offsets;
    std::vector<double> weights;
};

/// Gaussian density over grid embeddings of the same label, rows renormalized.
struct DiscretizedJitter {
    double sigma = 1.0;
};

/// With probability `rate` move to a uniformly chosen nearest neighbour of the
/// same label; otherwise stay.
struct DropoutToNeighbor {
    double rate = 0.5;
};

using FiniteAugmentation = std::variant<CyclicShift, DiscretizedJitter, DropoutToNeighbor>;

namespace detail {

inline long wrap(long v, long n) {
    const long r = v % n;
    return r < 0 ? r + n : r;
}

inline Eigen::MatrixXd build_shift(const StateSpace& space, const CyclicShift& p) {
    if (p.offsets.empty() || p.offsets.size() != p.weights.size())
        throw InvalidArgument("cyclic-shift needs matching non-empty offsets and weights");
    double total = 0.0;
    for (double w : p.weights) {
        if (!(w >= 0.0)) throw InvalidArgument("cyclic-shift weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("cyclic-shift weights must sum to 1");
    const auto n = static_cast<Eigen::Index>(space.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int label : space.labels()) {
        const BlockGrid grid = detect_grid(space, label);
        const std::size_t axes = grid.shape.size();
        for (std::size_t k = 0; k < p.offsets.size(); ++k) {
            const auto& off = p.offsets[k];
            if (off.size() != axes)
                throw InvalidArgument("cyclic-shift offset has " + std::to_string(off.size()) +
                                      " components but the grid has " + std::to_string(axes) +
                                      " axes");
            for (std::size_t c = 0; c < grid.states.size(); ++c) {
                std::size_t target;
                if (axes == 1) {
                    target = grid.at(static_cast<std::size_t>(
                        wrap(static_cast<long>(c) + off[0], static_cast<long>(grid.shape[0]))));
                } else {
                    const auto n1 = grid.shape[1];
                    const long i0 = static_cast<long>(c / n1), i1 = static_cast<long>(c % n1);
                    target = grid.at(
                        static_cast<std::size_t>(wrap(i0 + off[0], static_cast<long>(grid.shape[0]))),
                        static_cast<std::size_t>(wrap(i1 + off[1], static_cast<long>(n1))));
                }
                m(static_cast<Eigen::Index>(grid.states[c]), static_cast<Eigen::Index>(target)) +=
                    p.weights[k];
            }
        }
    }
    return m;
}

inline Eigen::MatrixXd build_jitter(const StateSpace& space, const DiscretizedJitter& p) {
    if (!(p.sigma > 0.0)) throw InvalidArgument("discretized-jitter needs sigma > 0");
    const auto n = static_cast<Eigen::Index>(space.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int label : space.labels()) {
        const BlockGrid grid = detect_grid(space, label);
        for (auto u : grid.states) {
            double z = 0.0;
            for (auto v : grid.states) {
                const double d2 = (space[u].embedding - space[v].embedding).squaredNorm();
                const double w = std::exp(-d2 / (2.0 * p.sigma * p.sigma));
                m(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = w;
                z += w;
            }
            m.row(static_cast<Eigen::Index>(u)) /= z;
        }
    }
    return m;
}

inline Eigen::MatrixXd build_dropout(const StateSpace& space, const DropoutToNeighbor& p) {
    if (!(p.rate >= 0.0 && p.rate <= 1.0))
        throw InvalidArgument("dropout-to-neighbor rate must lie in [0, 1]");
    const auto n = static_cast<Eigen::Index>(space.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index u = 0; u < n; ++u) {
        const auto& su = space[static_cast<std::size_t>(u)];
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index v = 0; v < n; ++v) {
            const auto& sv = space[static_cast<std::size_t>(v)];
            if (v == u || sv.label != su.label) continue;
            const double d = (su.embedding - sv.embedding).norm();
            if (d > 0.0) best = std::min(best, d);
        }
        std::vector<Eigen::Index> nbrs;
        for (Eigen::Index v = 0; v < n && std::isfinite(best); ++v) {
            const auto& sv = space[static_cast<std::size_t>(v)];
            if (v == u || sv.label != su.label) continue;
            if (std::abs((su.embedding - sv.embedding).norm() - best) <= 1e-9 * best) nbrs.push_back(v);
        }
        if (nbrs.empty()) {
            m(u, u) = 1.0;
            continue;
        }
        m(u, u) = 1.0 - p.rate;
        for (auto v : nbrs) m(u, v) += p.rate / static_cast<double>(nbrs.size());
    }
    return m;
}

}  // namespace detail

/// Realizes one base augmentation on a concrete finite space. The result is
/// row-stochastic and label-preserving. Shift and jitter require each label
/// block to form a regular 1-D or 2-D grid.
inline AugmentationMatrix build_finite_augmentation(const SpacePtr& space,
                                                    const FiniteAugmentation& kind) {
    if (!space || space->size() == 0) throw InvalidArgument("state space must be non-empty");
    Eigen::MatrixXd m = std::visit(
        [&](const auto& p) -> Eigen::MatrixXd {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, CyclicShift>) return detail::build_shift(*space, p);
            else if constexpr (std::is_same_v<P, DiscretizedJitter>) return detail::build_jitter(*space, p);
            else return detail::build_dropout(*space, p);
        },
        kind);
    return AugmentationMatrix(space, std::move(m));
}

/// Parses {"kind": "cyclic-shift"|"discretized-jitter"|"dropout-to-neighbor", ...params}.
inline FiniteAugmentation finite_augmentation_from_json(const nlohmann::json& j,
                                                        const std::string& where = "build") {
    if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
        throw ConfigError(where + ".kind", "expected a string");
    const auto kind = j.at("kind").get<std::string>();
    const nlohmann::json& p = j.contains("params") ? j.at("params") : j;
    try {
        if (kind == "cyclic-shift") {
            CyclicShift s;
            for (const auto& o : p.at("offsets")) {
                if (o.is_array()) s.offsets.push_back(o.get<std::vector<long>>());
                else s.offsets.push_back({o.get<long>()});
            }
            if (p.contains("weights")) s.weights = p.at("weights").get<std::vector<double>>();
            else s.weights.assign(s.offsets.size(), 1.0 / static_cast<double>(s.offsets.size()));
            return s;
        }
        if (kind == "discretized-jitter") return DiscretizedJitter{p.at("sigma").get<double>()};
        if (kind == "dropout-to-neighbor") return DropoutToNeighbor{p.value("rate", 0.5)};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where, std::string("invalid parameters: ") + e.what());
    }
    throw ConfigError(where + ".kind", "unknown augmentation kind '" + kind + "'");
}

/// Symmetric, row-stochastic version of A.
///
/// Doubly stochastic inputs (in particular symmetric ones) map to ½(A + Aᵀ),
/// so symmetric matrices come back unchanged. Otherwise the symmetric mass
/// A(u,v) + A(v,u) is spread with weight 1/|Ω| off the diagonal and the
/// remainder of each row is kept as a self-loop; this sends the lossy
/// {a,b,c → c} transform to [[2/3,0,1/3],[0,2/3,1/3],[1/3,1/3,1/3]].
inline AugmentationMatrix symmetrize(const AugmentationMatrix& a) {
    const Eigen::MatrixXd& m = a.matrix();
    const auto n = m.rows();
    if (a.symmetric()) return a;
    const Eigen::VectorXd col_sums = m.colwise().sum().transpose();
    if ((col_sums.array() - 1.0).abs().maxCoeff() <= kStochasticTol) {
        Eigen::MatrixXd s = 0.5 * (m + m.transpose());
        return AugmentationMatrix(a.space_ptr(), std::move(s));
    }
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    const double scale = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = s(j, i) = (m(i, j) + m(j, i)) * scale;
    for (Eigen::Index i = 0; i < n; ++i) s(i, i) = 1.0 - s.row(i).sum();
    return AugmentationMatrix(a.space_ptr(), std::move(s));
}

inline void write_augmentation_csv(std::ostream& os, const AugmentationMatrix& a) {
    io::write_matrix_csv(os, a.matrix(), a.space().ids());
}

/// Reads a dense CSV matrix; the header may list the space's ids in any order.
inline AugmentationMatrix read_augmentation_csv(const SpacePtr& space, const std::string& path) {
    auto csv = io::read_matrix_csv_file(path);
    if (csv.ids.size() != space->size())
        throw InvalidArgument(path + ": header has " + std::to_string(csv.ids.size()) +
                              " ids, space has " + std::to_string(space->size()));
    std::vector<Eigen::Index> pos(csv.ids.size());
    for (std::size_t k = 0; k < csv.ids.size(); ++k)
        pos[k] = static_cast<Eigen::Index>(space->index_of(csv.ids[k]));
    const auto n = static_cast<Eigen::Index>(space->size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            m(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]) = csv.matrix(i, j);
    return AugmentationMatrix(space, std::move(m));
}

}  // namespace augkern
