// fedsmooth: train, certify, benchmark and ablate certifiably-robust
// federated models.

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsmooth/errors.hpp"
#include "fedsmooth/harness.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::string> preset, mode, ablation, estimator, sigma, epsilon, gamma, seed, out, checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "key = value configuration file");
    cmd->add_option("--preset", f.preset, "desk or paper");
    cmd->add_option("--mode", f.mode, "fed or central");
    cmd->add_option("--ablation", f.ablation, "standard, adv_only or adv_smooth");
    cmd->add_option("--sigma", f.sigma, "Gaussian smoothing noise std");
    cmd->add_option("--epsilon", f.epsilon, "attack budget on the 0-255 scale (l2 budget = epsilon/256)");
    cmd->add_option("--estimator", f.estimator, "stochastic or one_point");
    cmd->add_option("--gamma", f.gamma, "device heterogeneity ratio in (0,1)");
    cmd->add_option("--seed", f.seed, "experiment seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--checkpoint", f.checkpoint, "parameter checkpoint (default <out>/model.params)");
    cmd->add_option("--set", f.sets, "override any config key: --set key=value (repeatable)");
}

fedsmooth::ExperimentConfig resolve(const CommonFlags& f) {
    fedsmooth::ConfigAssignments file_values;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw fedsmooth::ConfigError("cannot open config file " + f.config);
        std::stringstream buf;
        buf << in.rdbuf();
        file_values = fedsmooth::parse_config_lines(buf.str());
    }
    fedsmooth::ConfigAssignments overrides;
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw fedsmooth::ConfigError("--set expects key=value, got '" + s + "'");
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    const std::pair<const char*, const std::optional<std::string>*> named[] = {
        {"preset", &f.preset},     {"mode", &f.mode}, {"ablation", &f.ablation}, {"estimator", &f.estimator},
        {"sigma", &f.sigma},       {"epsilon", &f.epsilon}, {"gamma", &f.gamma}, {"seed", &f.seed},
        {"out", &f.out},           {"checkpoint", &f.checkpoint},
    };
    for (const auto& [key, value] : named) {
        if (*value) overrides.emplace_back(key, **value);
    }
    return fedsmooth::make_config(file_values, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certifiably-robust federated adversarial training with randomized smoothing"};
    app.require_subcommand(1);

    CommonFlags train_f, certify_f, bench_f, ablate_f;
    auto* train = app.add_subcommand("train", "train a model; writes <out>/model.params and <out>/rounds.csv");
    auto* certify = app.add_subcommand("certify", "certify test points; writes <out>/curve.csv");
    auto* bench = app.add_subcommand("bench", "time the stochastic and one-point attack estimators");
    auto* ablate = app.add_subcommand("ablate", "train and certify standard, adv_only and adv_smooth");
    add_common(train, train_f);
    add_common(certify, certify_f);
    add_common(bench, bench_f);
    add_common(ablate, ablate_f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) {
            const auto cfg = resolve(train_f);
            const auto result = fedsmooth::cmd_train(cfg);
            std::cout << "trained " << result.log.size() << " rounds; checkpoint " << cfg.checkpoint_path().string()
                      << "\n";
        } else if (certify->parsed()) {
            const auto cfg = resolve(certify_f);
            const auto curve = fedsmooth::cmd_certify(cfg);
            write_curve_csv(std::cout, fedsmooth::curve_rows(cfg, curve));
        } else if (bench->parsed()) {
            const auto cfg = resolve(bench_f);
            const auto report = fedsmooth::cmd_bench_estimators(cfg);
            std::filesystem::create_directories(cfg.out);
            std::ofstream file(cfg.out / "bench.csv");
            write_bench_report(file, report);
            write_bench_report(std::cout, report);
        } else if (ablate->parsed()) {
            const auto cfg = resolve(ablate_f);
            const auto rows = fedsmooth::cmd_ablate(cfg);
            write_curve_csv(std::cout, rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "fedsmooth: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
