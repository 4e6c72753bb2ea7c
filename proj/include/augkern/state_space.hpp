#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/error.hpp"

namespace augkern {

/// One labeled example of the finite domain: an input embedding plus a class.
struct State {
    std::string id;
    Eigen::VectorXd embedding;
    int label = 0;
};

/// Ordered, finite set of labeled states with a common embedding dimension.
class StateSpace {
public:
    StateSpace() = default;

    explicit StateSpace(std::vector<State> states) : states_(std::move(states)) {
        if (states_.empty()) throw InvalidArgument("state space must be non-empty");
        dim_ = states_.front().embedding.size();
        if (dim_ == 0) throw InvalidArgument("state embeddings must have dimension >= 1");
        for (std::size_t i = 0; i < states_.size(); ++i) {
            const auto& s = states_[i];
            if (s.embedding.size() != dim_)
                throw InvalidArgument("state '" + s.id + "' has embedding dimension " +
                                      std::to_string(s.embedding.size()) + ", expected " +
                                      std::to_string(dim_));
            if (!index_.emplace(s.id, i).second)
                throw InvalidArgument("duplicate state id '" + s.id + "'");
            labels_.insert(s.label);
        }
    }

    /// Evenly spaced 1-D grid of `n` points repeated once per label, label-major.
    static StateSpace grid_1d(std::size_t n, const std::vector<int>& labels = {1},
                              double spacing = 1.0) {
        std::vector<State> states;
        states.reserve(n * labels.size());
        for (int label : labels) {
            for (std::size_t i = 0; i < n; ++i) {
                std::string id = "s" + std::to_string(i);
                if (labels.size() > 1) id += "_" + std::to_string(label);
                states.push_back({id, Eigen::VectorXd::Constant(1, spacing * static_cast<double>(i)),
                                  label});
            }
        }
        return StateSpace(std::move(states));
    }

    std::size_t size() const noexcept { return states_.size(); }
    Eigen::Index dimension() const noexcept { return dim_; }
    const State& operator[](std::size_t i) const { return states_.at(i); }
    const std::vector<State>& states() const noexcept { return states_; }

    /// Distinct labels in ascending order.
    std::vector<int> labels() const { return {labels_.begin(), labels_.end()}; }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t index_of(const std::string& id) const {
        auto i = find(id);
        if (!i) throw InvalidArgument("unknown state id '" + id + "'");
        return *i;
    }

    /// State with exactly this embedding (within 1e-12 per coordinate) and label.
    std::optional<std::size_t> find_state(const Eigen::VectorXd& embedding, int label) const {
        if (embedding.size() != dim_) return std::nullopt;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            if (states_[i].label == label &&
                (states_[i].embedding - embedding).cwiseAbs().maxCoeff() <= 1e-12)
                return i;
        }
        return std::nullopt;
    }

    std::vector<std::size_t> block(int label) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < states_.size(); ++i)
            if (states_[i].label == label) out.push_back(i);
        return out;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(states_.size());
        for (const auto& s : states_) out.push_back(s.id);
        return out;
    }

private:
    std::vector<State> states_;
    std::unordered_map<std::string, std::size_t> index_;
    std::set<int> labels_;
    Eigen::Index dim_ = 0;
};

inline nlohmann::json to_json(const StateSpace& space) {
    nlohmann::json states = nlohmann::json::array();
    for (const auto& s : space.states()) {
        std::vector<double> e(s.embedding.data(), s.embedding.data() + s.embedding.size());
        states.push_back({{"id", s.id}, {"embedding", e}, {"label", s.label}});
    }
    return {{"states", states}};
}

/// Accepts either {"states": [...]} or {"grid_1d": {"n": N, "labels": [...], "spacing": h}}.
inline StateSpace state_space_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("space", "expected an object");
    if (j.contains("grid_1d")) {
        const auto& g = j.at("grid_1d");
        if (!g.contains("n") || !g.at("n").is_number_unsigned())
            throw ConfigError("space.grid_1d.n", "expected a positive integer");
        auto labels = g.value("labels", std::vector<int>{1});
        return StateSpace::grid_1d(g.at("n").get<std::size_t>(), labels, g.value("spacing", 1.0));
    }
    if (!j.contains("states") || !j.at("states").is_array())
        throw ConfigError("space.states", "expected an array of states");
    std::vector<State> states;
    const auto& arr = j.at("states");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& s = arr[i];
        const std::string where = "space.states[" + std::to_string(i) + "]";
        if (!s.contains("id") || !s.at("id").is_string())
            throw ConfigError(where + ".id", "expected a string");
        if (!s.contains("embedding") || !s.at("embedding").is_array())
            throw ConfigError(where + ".embedding", "expected an array of numbers");
        if (!s.contains("label") || !s.at("label").is_number_integer())
            throw ConfigError(where + ".label", "expected an integer");
        auto e = s.at("embedding").get<std::vector<double>>();
        states.push_back({s.at("id").get<std::string>(),
                          Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size())),
                          s.at("label").get<int>()});
    }
    return StateSpace(std::move(states));
}

/// Regular grid layout of one label block.
struct BlockGrid {
    int label = 0;
    std::vector<std::size_t> shape;     // one extent per axis (1 or 2 axes)
    std::vector<std::size_t> states;    // row-major grid coordinate -> state index
    std::vector<std::size_t> coord_of;  // state index -> row-major coordinate (block members only)

    std::size_t at(std::size_t i0, std::size_t i1 = 0) const {
        return states[shape.size() == 1 ? i0 : i0 * shape[1] + i1];
    }
};

namespace detail {

// Distinct sorted coordinate values; checks even spacing.
inline std::optional<std::vector<double>> regular_axis(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::vector<double> axis;
    for (double v : values)
        if (axis.empty() || std::abs(v - axis.back()) > 1e-12 * std::max(1.0, std::abs(v)))
            axis.push_back(v);
    if (axis.size() >= 3) {
        const double h = axis[1] - axis[0];
        for (std::size_t i = 2; i < axis.size(); ++i)
            if (std::abs((axis[i] - axis[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
                return std::nullopt;
    }
    return axis;
}

inline std::size_t axis_position(const std::vector<double>& axis, double v) {
    auto it = std::lower_bound(axis.begin(), axis.end(), v - 1e-12 * std::max(1.0, std::abs(v)));
    return static_cast<std::size_t>(it - axis.begin());
}

}  // namespace detail

/// Grid layout of the states carrying `label`. Throws InvalidArgument when
/// the embeddings of that block do not form a complete regular 1-D or 2-D grid.
inline BlockGrid detect_grid(const StateSpace& space, int label) {
    const auto members = space.block(label);
    if (members.empty()) throw InvalidArgument("no states with label " + std::to_string(label));
    const auto d = space.dimension();
    if (d != 1 && d != 2)
        throw InvalidArgument("grid augmentations need 1-D or 2-D embeddings, got dimension " +
                              std::to_string(d));
    BlockGrid grid;
    grid.label = label;
    std::vector<std::vector<double>> axes;
    for (Eigen::Index a = 0; a < d; ++a) {
        std::vector<double> vals;
        for (auto i : members) vals.push_back(space[i].embedding[a]);
        auto axis = detail::regular_axis(std::move(vals));
        if (!axis)
            throw InvalidArgument("embeddings of label " + std::to_string(label) +
                                  " are not evenly spaced along axis " + std::to_string(a));
        grid.shape.push_back(axis->size());
        axes.push_back(std::move(*axis));
    }
    std::size_t cells = 1;
    for (auto n : grid.shape) cells *= n;
    if (cells != members.size())
        throw InvalidArgument("embeddings of label " + std::to_string(label) +
                              " do not fill a complete grid");
    constexpr std::size_t unset = static_cast<std::size_t>(-1);
    grid.states.assign(cells, unset);
    grid.coord_of.assign(space.size(), unset);
    for (auto i : members) {
        std::size_t c = detail::axis_position(axes[0], space[i].embedding[0]);
        if (d == 2) c = c * grid.shape[1] + detail::axis_position(axes[1], space[i].embedding[1]);
        if (c >= cells || grid.states[c] != unset)
            throw InvalidArgument("embeddings of label " + std::to_string(label) +
                                  " do not fill a complete grid");
        grid.states[c] = i;
        grid.coord_of[i] = c;
    }
    return grid;
}

}  // namespace augkern
