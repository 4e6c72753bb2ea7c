#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "augkern/augmentation.hpp"
#include "augkern/chain.hpp"
#include "augkern/dataset.hpp"
#include "augkern/diagnostics.hpp"
#include "augkern/error.hpp"
#include "augkern/feature_map.hpp"
#include "augkern/io.hpp"
#include "augkern/kernel.hpp"
#include "augkern/knn.hpp"
#include "augkern/loss.hpp"
#include "augkern/objective.hpp"
#include "augkern/rng.hpp"
#include "augkern/sampler.hpp"

namespace augkern::harness {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentInfo {
    const char* kind;
    const char* description;
};

inline const std::vector<ExperimentInfo>& experiments() {
    static const std::vector<ExperimentInfo> list{
        {"chain-stationary", "stationary distribution of a Markov augmentation chain"},
        {"chain-mixing", "finite-time distance to stationarity against the mixing bound"},
        {"kernel-build", "induced kernel, weights and property report for a chain"},
        {"kernel-update", "power-series kernel update for an added augmentation"},
        {"knn-equivalence", "k-NN on chain samples versus the induced kernel classifier"},
        {"objective-compare", "exact, first-order and second-order augmented objectives"},
        {"prop1-check", "covariance sandwich and distance bounds for trained weights"},
        {"align-rank", "rank candidate transformations by kernel target alignment"},
        {"invariance", "feature invariance of feature maps under a transformation"},
        {"jitter-kernel", "Gaussian fit of the jitter-induced kernel on a 1-D grid"},
    };
    return list;
}

inline bool known_kind(const std::string& k) {
    for (const auto& e : experiments())
        if (k == e.kind) return true;
    return false;
}

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;
    unsigned workers = 1;
    std::optional<std::uint64_t> seed_override;
};

struct RunResult {
    std::filesystem::path out_dir;
    std::vector<std::string> files;
};

/// Parses a config file; syntax errors carry nlohmann's line/column message.
inline nlohmann::json load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<json>", e.what());
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + key, "missing");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + key, e.what());
    }
}

template <typename T>
T field_or(const nlohmann::json& j, const std::string& key, T fallback, const std::string& where = "") {
    if (!j.contains(key)) return fallback;
    return field<T>(j, key, where);
}

inline ChainSpec load_chain(const nlohmann::json& cfg, const std::filesystem::path& base) {
    if (!cfg.contains("chain")) throw ConfigError("chain", "missing");
    const auto& c = cfg.at("chain");
    if (c.is_string()) {
        auto p = std::filesystem::path(c.get<std::string>());
        if (p.is_relative()) p = base / p;
        return chain_spec_from_json(load_config(p), p.parent_path());
    }
    return chain_spec_from_json(c, base);
}

inline Dataset load_dataset(const nlohmann::json& cfg) {
    if (!cfg.contains("dataset")) throw ConfigError("dataset", "missing");
    return dataset_from_json(cfg.at("dataset"));
}

inline TransformSampler load_sampler(const nlohmann::json& j, const std::string& where) {
    return make_sampler(j, where);
}

inline FeatureMap load_feature_map(const nlohmann::json& cfg, Eigen::Index input_dim,
                                   const std::string& key = "feature_map") {
    if (!cfg.contains(key)) return FeatureMap::identity();
    return feature_map_from_json(cfg.at(key), input_dim, key);
}

/// {"kind": "exact"} or {"kind": "monte-carlo", "samples": n}; the MC seed is derived from the master seed.
inline Expectation load_expectation(const nlohmann::json& cfg, std::uint64_t seed) {
    if (!cfg.contains("expectation")) return Expectation::exact();
    const auto& e = cfg.at("expectation");
    const auto kind = field<std::string>(e, "kind", "expectation.");
    if (kind == "exact") return Expectation::exact();
    if (kind == "monte-carlo") {
        const auto n = field<std::size_t>(e, "samples", "expectation.");
        if (n == 0) throw ConfigError("expectation.samples", "must be positive");
        return Expectation::monte_carlo(n, seed);
    }
    throw ConfigError("expectation.kind", "unknown expectation '" + kind + "'");
}

inline LossModel load_loss(const nlohmann::json& cfg) {
    if (!cfg.contains("loss")) return LossModel::logistic();
    return loss_from_json(cfg.at("loss"));
}

inline std::vector<Eigen::VectorXd> probe_grid(const nlohmann::json& cfg, Eigen::Index dim, std::uint64_t seed) {
    const nlohmann::json p = cfg.value("probes", nlohmann::json::object());
    const auto count = field_or<std::size_t>(p, "count", 20, "probes.");
    const auto scale = field_or<double>(p, "scale", 1.0, "probes.");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<Eigen::VectorXd> out;
    for (std::size_t i = 0; i < count; ++i) {
        Eigen::VectorXd w(dim);
        for (Eigen::Index j = 0; j < dim; ++j) w[j] = normal(rng);
        out.push_back(std::move(w));
    }
    return out;
}

struct TrainSettings {
    double step = 0.5;
    std::size_t iterations = 200;
    double l2 = 0.0;
};

inline TrainSettings load_train(const nlohmann::json& j, const std::string& where) {
    TrainSettings t;
    t.step = field_or<double>(j, "step", t.step, where);
    t.iterations = field_or<std::size_t>(j, "iterations", t.iterations, where);
    t.l2 = field_or<double>(j, "l2", t.l2, where);
    if (!(t.step > 0.0)) throw ConfigError(where + "step", "must be positive");
    if (!(t.l2 >= 0.0)) throw ConfigError(where + "l2", "must be nonnegative");
    return t;
}

/// Collects result files and appends the manifest reference to each CSV.
class Writer {
public:
    explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void csv(const std::string& name, const std::function<void(std::ostream&)>& body) {
        std::ostringstream os;
        body(os);
        os << "# manifest: manifest.json\n";
        put(name, os.str());
    }

    void json(const std::string& name, const nlohmann::json& j) { put(name, j.dump(2) + "\n"); }

    void put(const std::string& name, const std::string& content) {
        std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + (dir_ / name).string());
        f << content;
        files_.push_back(name);
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }
    const std::vector<std::string>& files() const noexcept { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

inline std::vector<std::size_t> test_states(const nlohmann::json& cfg, const ChainSpec& spec) {
    std::vector<std::size_t> out;
    if (!cfg.contains("test_states") || cfg.at("test_states") == "all") {
        for (std::size_t i = 0; i < spec.size(); ++i) out.push_back(i);
        return out;
    }
    const auto ids = field<std::vector<std::string>>(cfg, "test_states", "");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto idx = spec.space().find(ids[i]);
        if (!idx) throw ConfigError("test_states[" + std::to_string(i) + "]", "unknown state id");
        out.push_back(*idx);
    }
    return out;
}

inline AugmentationMatrix load_single_augmentation(const nlohmann::json& cfg, const ChainSpec& spec,
                                                   const std::filesystem::path& base) {
    if (!cfg.contains("add")) throw ConfigError("add", "missing");
    nlohmann::json tmp{{"space", to_json(spec.space())},
                       {"augmentations", nlohmann::json::array({cfg.at("add")})},
                       {"dataset", nlohmann::json::array({{{"state", spec.space()[0].id}}})}};
    tmp["augmentations"][0]["beta"] = 1.0;
    try {
        return chain_spec_from_json(tmp, base).augmentations().front().matrix;
    } catch (const ConfigError& e) {
        throw ConfigError("add", e.what());
    }
}

// ---- experiments ----

inline void chain_stationary(const nlohmann::json& cfg, const std::filesystem::path& base, Writer& w) {
    const ChainSpec spec = load_chain(cfg, base);
    const auto pi = stationary_distribution(spec);
    const Eigen::MatrixXd r = transition_matrix(spec);
    const Eigen::RowVectorXd res = pi.probs.transpose() * r - pi.probs.transpose();
    const auto reach = check_surjectivity(spec);
    w.csv("stationary.csv", [&](std::ostream& os) { write_distribution_csv(os, spec.space(), pi); });
    nlohmann::json unreachable = nlohmann::json::array();
    for (auto u : reach.unreachable) unreachable.push_back(spec.space()[u].id);
    w.json("summary.json", {{"beta", spec.beta()},
                            {"residual_inf", res.cwiseAbs().maxCoeff()},
                            {"surjective", reach.surjective},
                            {"unreachable", unreachable},
                            {"label_preserving", spec.label_preserving()}});
}

inline void chain_mixing(const nlohmann::json& cfg, const std::filesystem::path& base, std::uint64_t seed,
                         unsigned workers, Writer& w) {
    const ChainSpec spec = load_chain(cfg, base);
    const auto steps = field_or<std::size_t>(cfg, "steps", 100);
    const auto pi = stationary_distribution(spec);
    w.csv("mixing.csv", [&](std::ostream& os) {
        os << "n,distance_l2,bound\n";
        for (std::size_t n = 0; n <= steps; ++n) {
            const auto pn = finite_time_distribution(spec, n);
            os << n << ',' << io::format_double((pn.probs - pi.probs).norm()) << ','
               << io::format_double(mixing_bound(spec.beta(), n)) << '\n';
        }
    });
    if (!cfg.contains("trajectories")) return;
    const auto& t = cfg.at("trajectories");
    const auto count = field<std::size_t>(t, "count", "trajectories.");
    const auto length = field<std::size_t>(t, "steps", "trajectories.");
    if (count == 0 || length == 0) throw ConfigError("trajectories", "count and steps must be positive");
    std::vector<std::vector<std::size_t>> hist(count);
    std::vector<std::size_t> retractions(count);
    parallel_for(count, workers, [&](std::size_t i) {
        const auto tr = sample_trajectory(spec, derive_seed(seed, i), length);
        hist[i].assign(spec.size(), 0);
        for (std::size_t k = 1; k < tr.states.size(); ++k) ++hist[i][tr.states[k]];
        retractions[i] = tr.retractions;
    });
    std::vector<double> freq(spec.size(), 0.0);
    std::size_t total = 0, retracted = 0;
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t s = 0; s < spec.size(); ++s) freq[s] += static_cast<double>(hist[i][s]);
        total += length;
        retracted += retractions[i];
    }
    w.csv("trajectory_frequencies.csv", [&](std::ostream& os) {
        os << "state_id,empirical,stationary\n";
        for (std::size_t s = 0; s < spec.size(); ++s)
            os << spec.space()[s].id << ',' << io::format_double(freq[s] / static_cast<double>(total)) << ','
               << io::format_double(pi[s]) << '\n';
    });
    w.json("trajectory_summary.json",
           {{"trajectories", count},
            {"steps", length},
            {"retraction_fraction", static_cast<double>(retracted) / static_cast<double>(total)},
            {"expected_retraction_fraction", 1.0 / (spec.beta() + 1.0)}});
}

inline ReferenceMeasure load_measure(const nlohmann::json& cfg) {
    if (!cfg.contains("reference_measure")) return ReferenceMeasure::uniform();
    const auto& m = cfg.at("reference_measure");
    if (m == "uniform") return ReferenceMeasure::uniform();
    if (m == "reversible") return ReferenceMeasure::reversible();
    if (m.is_array()) {
        auto v = field<std::vector<double>>(cfg, "reference_measure", "");
        return ReferenceMeasure::explicit_measure(
            Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    throw ConfigError("reference_measure", "expected \"uniform\", \"reversible\" or an array");
}

inline void kernel_build(const nlohmann::json& cfg, const std::filesystem::path& base, Writer& w) {
    const ChainSpec spec = load_chain(cfg, base);
    InducedKernel ik;
    try {
        ik = induced_kernel(spec, load_measure(cfg));
    } catch (const InvalidArgument& e) {
        throw ConfigError("reference_measure", e.what());
    }
    const auto pi = stationary_distribution(spec);
    const Eigen::VectorXd recon = ik.kernel.matrix.transpose() * ik.weights.psi;
    const auto report = verify_kernel_properties(ik.kernel);
    const auto ids = spec.space().ids();
    w.csv("kernel.csv", [&](std::ostream& os) { io::write_matrix_csv(os, ik.kernel.matrix, ids); });
    w.csv("weights.csv", [&](std::ostream& os) {
        os << "state_id,psi,pi0\n";
        for (std::size_t i = 0; i < ids.size(); ++i)
            os << ids[i] << ',' << io::format_double(ik.weights.psi[static_cast<Eigen::Index>(i)]) << ','
               << io::format_double(ik.pi0[static_cast<Eigen::Index>(i)]) << '\n';
    });
    auto j = to_json(report);
    j["reconstruction_error"] = (recon - pi.probs).cwiseAbs().maxCoeff();
    w.json("report.json", j);
}

inline void kernel_update(const nlohmann::json& cfg, const std::filesystem::path& base, Writer& w) {
    const ChainSpec spec = load_chain(cfg, base);
    const AugmentationMatrix a_hat = load_single_augmentation(cfg, spec, base);
    const auto beta_hat = field<double>(cfg, "beta_hat", "");
    const auto truncation = field_or<std::size_t>(cfg, "truncation", 1000);
    if (!(beta_hat >= 0.0)) throw ConfigError("beta_hat", "must be nonnegative");
    if (truncation < 1) throw ConfigError("truncation", "must be >= 1");
    const auto k = unweighted_kernel(spec);
    const auto upd = update_kernel_add(k, a_hat, beta_hat, truncation);
    const auto n = static_cast<Eigen::Index>(spec.size());
    const Eigen::MatrixXd direct =
        (Eigen::MatrixXd::Identity(n, n) * (beta_hat + spec.beta() + 1.0) - spec.combined() - beta_hat * a_hat.matrix())
            .partialPivLu()
            .inverse();
    w.csv("updated_kernel.csv", [&](std::ostream& os) { io::write_matrix_csv(os, upd.kernel.matrix, spec.space().ids()); });
    w.json("report.json", {{"terms", upd.terms},
                           {"last_term_norm", upd.last_term_norm},
                           {"spectral_radius", upd.spectral_radius},
                           {"max_abs_diff_direct", (upd.kernel.matrix - direct).cwiseAbs().maxCoeff()}});
}

inline void knn_equivalence(const nlohmann::json& cfg, const std::filesystem::path& base, std::uint64_t seed,
                            unsigned workers, Writer& w) {
    const ChainSpec spec = load_chain(cfg, base);
    EquivalenceConfig ec;
    ec.test_states = test_states(cfg, spec);
    ec.sample_counts = field<std::vector<std::size_t>>(cfg, "sample_counts", "");
    if (ec.sample_counts.empty()) throw ConfigError("sample_counts", "must be non-empty");
    ec.replicates = field_or<std::size_t>(cfg, "replicates", 1);
    if (ec.replicates < 1) throw ConfigError("replicates", "must be >= 1");
    if (cfg.contains("k")) {
        const auto k = field<std::size_t>(cfg, "k", "");
        if (k < 1) throw ConfigError("k", "must be >= 1");
        ec.k_rule = [k](std::size_t) { return k; };
    }
    ec.master_seed = seed;
    ec.workers = workers;
    std::vector<EquivalenceRow> rows;
    try {
        rows = equivalence_experiment(spec, ec);
    } catch (const InvalidArgument& e) {
        throw ConfigError("chain", e.what());
    }
    w.csv("agreement.csv", [&](std::ostream& os) { write_agreement_csv(os, spec.space(), rows); });
    const auto summary = summarize(rows);
    w.csv("summary.csv", [&](std::ostream& os) {
        os << "n,k,mean_agreement,stderr\n";
        for (const auto& s : summary)
            os << s.n << ',' << s.k << ',' << io::format_double(s.mean) << ',' << io::format_double(s.stderr_) << '\n';
    });
    // disagreement ≈ c·n^e, fitted over the sample counts with any disagreement
    std::vector<double> xs, ys;
    for (const auto& s : summary)
        if (s.mean < 1.0) {
            xs.push_back(static_cast<double>(s.n));
            ys.push_back(1.0 - s.mean);
        }
    if (xs.size() >= 2) {
        const auto [e, log_c] = fit_power_law(xs, ys);
        w.json("power_law.json", {{"disagreement_coefficient", std::exp(log_c)}, {"disagreement_exponent", e}});
    }
}

inline void objective_compare(const nlohmann::json& cfg, std::uint64_t seed, unsigned workers, Writer& w) {
    const Dataset data = load_dataset(cfg);
    if (!cfg.contains("sampler")) throw ConfigError("sampler", "missing");
    const auto sampler = load_sampler(cfg.at("sampler"), "sampler");
    const auto fmap = load_feature_map(cfg, data.dimension());
    const auto loss = load_loss(cfg);
    const auto expectation = load_expectation(cfg, derive_seed(seed, 1));
    ObjectiveSpec spec{data, sampler, fmap, loss, ObjectiveMode::true_augmented, expectation};
    std::optional<Objective> obj_storage;
    try {
        obj_storage.emplace(spec, workers);
    } catch (const InvalidArgument& e) {
        throw ConfigError("objective", e.what());
    }
    const Objective& obj = *obj_storage;
    const auto probes = probe_grid(cfg, obj.parameter_dim(), derive_seed(seed, 2));
    const auto& modes = all_objective_modes();
    w.csv("probes.csv", [&](std::ostream& os) {
        os << "probe";
        for (auto m : modes) os << ',' << mode_name(m);
        os << '\n';
        for (std::size_t i = 0; i < probes.size(); ++i) {
            os << i;
            for (auto m : modes) os << ',' << io::format_double(obj.value(probes[i], m));
            os << '\n';
        }
    });
    if (!cfg.contains("train")) return;
    const auto& tcfg = cfg.at("train");
    const auto ts = load_train(tcfg, "train.");
    std::vector<std::string> names = field_or<std::vector<std::string>>(tcfg, "modes", {"true"}, "train.");
    nlohmann::json kl = nlohmann::json::object();
    std::optional<Eigen::VectorXd> w_true;
    std::vector<std::pair<std::string, Eigen::VectorXd>> trained;
    for (const auto& name : names) {
        ObjectiveMode mode;
        try {
            mode = parse_mode(name);
        } catch (const InvalidArgument& e) {
            throw ConfigError("train.modes", e.what());
        }
        ObjectiveSpec s = spec;
        s.mode = mode;
        const Objective o(s, workers);
        std::ostringstream gaps;
        const bool on_g = mode == ObjectiveMode::true_augmented;
        if (on_g) gaps << "iteration,g,g_first_order,g_second_order,rel_gap_first_order,rel_gap_second_order\n";
        const auto r = train(o, Eigen::VectorXd::Zero(o.parameter_dim()), ts.step, ts.iterations, ts.l2,
                             [&](std::size_t it, const Eigen::VectorXd& wv) {
                                 if (!on_g) return;
                                 const double g = obj.value(wv, ObjectiveMode::true_augmented);
                                 const double g1 = obj.value(wv, ObjectiveMode::first_order);
                                 const double g2 = obj.value(wv, ObjectiveMode::second_order);
                                 gaps << it << ',' << io::format_double(g) << ',' << io::format_double(g1) << ','
                                      << io::format_double(g2) << ',' << io::format_double(std::abs(g - g1) / g)
                                      << ',' << io::format_double(std::abs(g - g2) / g) << '\n';
                             });
        w.csv("trace_" + name + ".csv", [&](std::ostream& os) { write_trace_csv(os, name, r.trace); });
        if (on_g) {
            w_true = r.w;
            w.csv("gap_along_trace.csv", [&](std::ostream& os) { os << gaps.str(); });
        }
        trained.emplace_back(name, r.w);
    }
    if (w_true && loss.kind != LossModel::Kind::squared) {
        for (const auto& [name, wv] : trained) {
            double sum = 0.0;
            for (const auto& x : data.inputs) sum += prediction_kl(obj.predict_proba(*w_true, x), obj.predict_proba(wv, x));
            kl[name] = sum / static_cast<double>(data.size());
        }
        w.json("prediction_kl.json", kl);
    }
}

inline void prop1_check(const nlohmann::json& cfg, std::uint64_t seed, Writer& w) {
    const Dataset data = load_dataset(cfg);
    if (!cfg.contains("sampler")) throw ConfigError("sampler", "missing");
    const auto sampler = load_sampler(cfg.at("sampler"), "sampler");
    const auto fmap = load_feature_map(cfg, data.dimension());
    const auto loss = load_loss(cfg);
    if (!loss.scalar()) throw ConfigError("loss", "prop1-check needs a scalar loss");
    const auto ts = load_train(cfg.value("train", nlohmann::json::object()), "train.");
    auto fit = [&](ObjectiveMode mode) {
        const Objective o({data, sampler, fmap, loss, mode, Expectation::exact()});
        return train(o, Eigen::VectorXd::Zero(o.parameter_dim()), ts.step, ts.iterations, ts.l2);
    };
    Prop1Report r;
    try {
        const auto w_hat = fit(ObjectiveMode::first_order);
        const auto w_star = fit(ObjectiveMode::true_augmented);
        const auto probes = probe_grid(cfg, w_hat.w.size(), derive_seed(seed, 2));
        r = proposition1_check(data, sampler, fmap, loss, w_hat.w, w_star.w, probes);
        w.csv("weights.csv", [&](std::ostream& os) {
            os << "index,w_hat,w_star\n";
            for (Eigen::Index i = 0; i < w_hat.w.size(); ++i)
                os << i << ',' << io::format_double(w_hat.w[i]) << ',' << io::format_double(w_star.w[i]) << '\n';
        });
    } catch (const InvalidArgument& e) {
        throw ConfigError("sampler", e.what());
    }
    w.json("report.json", to_json(r));
}

inline std::size_t subsample_size(const nlohmann::json& cfg, std::size_t n) {
    if (!cfg.contains("subsample")) return std::max<std::size_t>(2, n / 4);
    const auto& s = cfg.at("subsample");
    std::size_t out = 0;
    if (s.is_number_integer()) out = s.get<std::size_t>();
    else if (s.is_number()) out = static_cast<std::size_t>(std::llround(s.get<double>() * static_cast<double>(n)));
    else throw ConfigError("subsample", "expected an integer count or a fraction");
    if (out < 2 || out > n) throw ConfigError("subsample", "must lie in [2, dataset size]");
    return out;
}

inline void align_rank(const nlohmann::json& cfg, std::uint64_t seed, unsigned workers, Writer& w) {
    const Dataset data = load_dataset(cfg);
    const auto fmap = load_feature_map(cfg, data.dimension());
    if (!cfg.contains("candidates") || !cfg.at("candidates").is_array() || cfg.at("candidates").empty())
        throw ConfigError("candidates", "expected a non-empty array");
    std::vector<Candidate> cands;
    const auto& arr = cfg.at("candidates");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string where = "candidates[" + std::to_string(i) + "].";
        cands.push_back({field<std::string>(arr[i], "name", where),
                         arr[i].contains("sampler") ? load_sampler(arr[i].at("sampler"), where + "sampler")
                                                    : throw ConfigError(where + "sampler", "missing")});
    }
    RankOptions opt;
    opt.subsample = subsample_size(cfg, data.size());
    opt.repeats = field_or<std::size_t>(cfg, "repeats", 10);
    if (opt.subsample == data.size()) opt.repeats = 1;
    opt.seed = derive_seed(seed, 3);
    opt.expectation = load_expectation(cfg, derive_seed(seed, 1));
    opt.workers = workers;
    std::vector<RankRow> rows;
    try {
        rows = rank_transformations(data, fmap, cands, opt);
    } catch (const InvalidArgument& e) {
        throw ConfigError("candidates", e.what());
    }
    w.csv("ranking.csv", [&](std::ostream& os) { write_rank_csv(os, rows); });
}

inline void invariance(const nlohmann::json& cfg, std::uint64_t seed, Writer& w) {
    const Dataset data = load_dataset(cfg);
    if (!cfg.contains("sampler")) throw ConfigError("sampler", "missing");
    const auto sampler = load_sampler(cfg.at("sampler"), "sampler");
    const auto expectation = load_expectation(cfg, derive_seed(seed, 1));
    std::vector<std::pair<std::string, FeatureMap>> maps;
    if (cfg.contains("feature_maps")) {
        const auto& arr = cfg.at("feature_maps");
        if (!arr.is_array() || arr.empty()) throw ConfigError("feature_maps", "expected a non-empty array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = "feature_maps[" + std::to_string(i) + "]";
            maps.emplace_back(field<std::string>(arr[i], "name", where + "."),
                              feature_map_from_json(arr[i], data.dimension(), where));
        }
    } else {
        maps.emplace_back("identity", FeatureMap::identity());
    }
    std::vector<double> values;
    try {
        for (const auto& [name, fm] : maps) values.push_back(feature_invariance(fm, sampler, data, expectation));
    } catch (const InvalidArgument& e) {
        throw ConfigError("sampler", e.what());
    }
    const double ref = values.front();
    w.csv("invariance.csv", [&](std::ostream& os) {
        os << "feature_map,invariance,ratio_to_first\n";
        for (std::size_t i = 0; i < maps.size(); ++i) {
            os << maps[i].first << ',' << io::format_double(values[i]) << ',';
            if (ref == 0.0) os << "undefined";
            else os << io::format_double(values[i] / ref);
            os << '\n';
        }
    });
}

inline void jitter_kernel(const nlohmann::json& cfg, Writer& w) {
    const auto grid = field_or<std::size_t>(cfg, "grid_size", 41);
    const auto sigma = field_or<double>(cfg, "sigma", 1.0);
    const auto beta = field_or<double>(cfg, "beta", 1.0);
    JitterKernelReport r;
    try {
        r = jitter_kernel_check(grid, sigma, beta);
    } catch (const InvalidArgument& e) {
        throw ConfigError("jitter", e.what());
    }
    w.csv("row.csv", [&](std::ostream& os) {
        os << "offset,kernel,fit\n";
        for (Eigen::Index i = 0; i < r.row.size(); ++i) {
            const double t = r.offsets[i];
            const double fit =
                r.amplitude * std::exp(-t * t / (2.0 * r.fitted_bandwidth * r.fitted_bandwidth));
            os << io::format_double(t) << ',' << io::format_double(r.row[i]) << ',' << io::format_double(fit) << '\n';
        }
    });
    w.json("report.json", to_json(r));
}

}  // namespace detail

/// Parses every field the experiment needs without running it.
inline void validate(const nlohmann::json& cfg, const std::filesystem::path& base = {});

inline std::uint64_t master_seed(const nlohmann::json& cfg, const RunOptions& opt) {
    if (opt.seed_override) return *opt.seed_override;
    return detail::field_or<std::uint64_t>(cfg, "seed", 0);
}

inline std::string kind_of(const nlohmann::json& cfg) {
    if (!cfg.is_object()) throw ConfigError("", "config must be a JSON object");
    const auto kind = detail::field<std::string>(cfg, "kind", "");
    if (!known_kind(kind)) throw ConfigError("kind", "unknown experiment kind '" + kind + "'");
    return kind;
}

/// Runs one experiment and writes its artifacts plus manifest.json.
inline RunResult run(const nlohmann::json& cfg, const std::filesystem::path& base, const RunOptions& opt = {}) {
    const auto kind = kind_of(cfg);
    std::filesystem::path out;
    if (opt.out_dir) {
        out = *opt.out_dir;
    } else {
        out = detail::field<std::string>(cfg, "output_dir", "");
        if (out.is_relative()) out = base / out;
    }
    const std::uint64_t seed = master_seed(cfg, opt);
    const unsigned workers = std::max(1u, opt.workers);
    detail::Writer w(out);
    if (kind == "chain-stationary") detail::chain_stationary(cfg, base, w);
    else if (kind == "chain-mixing") detail::chain_mixing(cfg, base, seed, workers, w);
    else if (kind == "kernel-build") detail::kernel_build(cfg, base, w);
    else if (kind == "kernel-update") detail::kernel_update(cfg, base, w);
    else if (kind == "knn-equivalence") detail::knn_equivalence(cfg, base, seed, workers, w);
    else if (kind == "objective-compare") detail::objective_compare(cfg, seed, workers, w);
    else if (kind == "prop1-check") detail::prop1_check(cfg, seed, w);
    else if (kind == "align-rank") detail::align_rank(cfg, seed, workers, w);
    else if (kind == "invariance") detail::invariance(cfg, seed, w);
    else detail::jitter_kernel(cfg, w);

    std::ostringstream hash;
    hash << std::hex << fnv1a(cfg.dump());
    nlohmann::json manifest{{"kind", kind},
                            {"config_hash", "fnv1a64:" + hash.str()},
                            {"master_seed", seed},
                            {"versions", {{"augkern", kVersion},
                                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                        std::to_string(EIGEN_MINOR_VERSION)},
                                          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                            {"files", w.files()}};
    w.json("manifest.json", manifest);
    return {out, w.files()};
}

inline void validate(const nlohmann::json& cfg, const std::filesystem::path& base) {
    const auto kind = kind_of(cfg);
    if (!cfg.contains("output_dir")) throw ConfigError("output_dir", "missing");
    if (kind.rfind("chain-", 0) == 0 || kind.rfind("kernel-", 0) == 0 || kind == "knn-equivalence") {
        const ChainSpec spec = detail::load_chain(cfg, base);
        if (kind == "kernel-update") {
            detail::load_single_augmentation(cfg, spec, base);
            detail::field<double>(cfg, "beta_hat", "");
        }
        if (kind == "knn-equivalence") {
            detail::test_states(cfg, spec);
            detail::field<std::vector<std::size_t>>(cfg, "sample_counts", "");
        }
        if (kind == "kernel-build") detail::load_measure(cfg);
        return;
    }
    if (kind == "jitter-kernel") return;
    const Dataset data = detail::load_dataset(cfg);
    detail::load_feature_map(cfg, data.dimension());
    detail::load_expectation(cfg, 0);
    if (kind == "align-rank") {
        if (!cfg.contains("candidates") || !cfg.at("candidates").is_array())
            throw ConfigError("candidates", "expected an array");
        for (std::size_t i = 0; i < cfg.at("candidates").size(); ++i) {
            const std::string where = "candidates[" + std::to_string(i) + "].";
            detail::field<std::string>(cfg.at("candidates")[i], "name", where);
            if (!cfg.at("candidates")[i].contains("sampler")) throw ConfigError(where + "sampler", "missing");
            detail::load_sampler(cfg.at("candidates")[i].at("sampler"), where + "sampler");
        }
        detail::subsample_size(cfg, data.size());
        return;
    }
    if (!cfg.contains("sampler")) throw ConfigError("sampler", "missing");
    detail::load_sampler(cfg.at("sampler"), "sampler");
    if (kind != "invariance") detail::load_loss(cfg);
}

}  // namespace augkern::harness
