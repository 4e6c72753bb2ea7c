#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "augkern/harness.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumerical = 2, kOther = 3 };

std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("AUGKERN_SEED");
    if (!s || !*s) return std::nullopt;
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos, 0);
        if (pos != std::string(s).size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw augkern::ConfigError("AUGKERN_SEED", "not an unsigned integer: '" + std::string(s) + "'");
    }
}

template <typename F>
int guarded(F&& body) {
    try {
        body();
        return kOk;
    } catch (const augkern::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const augkern::NumericalError& e) {
        nlohmann::json diag{{"error", e.what()}};
        if (!e.report().empty()) {
            try {
                diag["report"] = nlohmann::json::parse(e.report());
            } catch (const nlohmann::json::exception&) {
                diag["report"] = e.report();
            }
        }
        std::cerr << "numerical precondition failed: " << diag.dump() << '\n';
        return kNumerical;
    } catch (const augkern::InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOther;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"augkern: augmentation kernel experiments"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    unsigned workers = 1;
    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config, "experiment config (JSON)")->required();
    run->add_option("--out", out, "output directory (overrides output_dir)");
    run->add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 1024u));

    std::string vconfig;
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    validate->add_option("config", vconfig, "experiment config (JSON)")->required();

    app.add_subcommand("list", "list experiment kinds");

    CLI11_PARSE(app, argc, argv);

    if (app.got_subcommand("list")) {
        for (const auto& e : augkern::harness::experiments()) std::cout << e.kind << "  " << e.description << '\n';
        return kOk;
    }
    if (app.got_subcommand("validate")) {
        return guarded([&] {
            const std::filesystem::path p(vconfig);
            augkern::harness::validate(augkern::harness::load_config(p), p.parent_path());
            std::cout << "ok\n";
        });
    }
    return guarded([&] {
        const std::filesystem::path p(config);
        augkern::harness::RunOptions opt;
        if (!out.empty()) opt.out_dir = out;
        opt.workers = workers;
        opt.seed_override = env_seed();
        const auto r = augkern::harness::run(augkern::harness::load_config(p), p.parent_path(), opt);
        for (const auto& f : r.files) std::cout << (r.out_dir / f).string() << '\n';
    });
}
