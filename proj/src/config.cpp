#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedsmooth/errors.hpp"
#include "fedsmooth/harness.hpp"

namespace fedsmooth {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double as_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
    return out;
}

std::size_t as_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(as_u64(key, v)); }

std::vector<std::size_t> as_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(as_size(key, trim(tok)));
    if (out.empty()) throw ConfigError("key '" + key + "': expected a comma-separated list of integers");
    return out;
}

template <class F>
auto wrap(const std::string& key, F&& parse) {
    try {
        return parse();
    } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
    }
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::vector<std::pair<std::string_view, Setter>>& setters() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<std::pair<std::string_view, Setter>> table = {
        {"preset", [](C& c, S k, S v) {
             if (v == "desk") {
                 c.preset = Preset::desk;
                 c.federation = FederationConfig::desk_scale();
             } else if (v == "paper") {
                 c.preset = Preset::paper;
                 c.federation = FederationConfig::paper_scale();
                 c.synth_per_class = 6000;
                 c.train_subset = 60000;
             } else {
                 throw ConfigError("key '" + k + "': expected desk or paper, got '" + v + "'");
             }
         }},
        {"mode", [](C& c, S k, S v) {
             if (v == "fed") {
                 c.mode = TrainingMode::fed_smoothadv;
             } else if (v == "central") {
                 c.mode = TrainingMode::centralized_smoothadv;
             } else {
                 throw ConfigError("key '" + k + "': expected fed or central, got '" + v + "'");
             }
         }},
        {"ablation", [](C& c, S k, S v) { c.ablation = wrap(k, [&] { return parse_ablation(v); }); }},
        {"estimator", [](C& c, S k, S v) { c.estimator = wrap(k, [&] { return parse_estimator(v); }); }},
        {"sigma", [](C& c, S k, S v) { c.sigma = as_double(k, v); }},
        {"epsilon", [](C& c, S k, S v) { c.epsilon = as_double(k, v); }},
        {"gamma", [](C& c, S k, S v) { c.federation.gamma_device = as_double(k, v); }},
        {"seed", [](C& c, S k, S v) { c.seed = as_u64(k, v); }},
        {"dataset", [](C& c, S k, S v) {
             if (v != "synth" && v != "idx") throw ConfigError("key '" + k + "': expected synth or idx, got '" + v + "'");
             c.dataset = v;
         }},
        {"train_images", [](C& c, S, S v) { c.train_images = v; }},
        {"train_labels", [](C& c, S, S v) { c.train_labels = v; }},
        {"test_images", [](C& c, S, S v) { c.test_images = v; }},
        {"test_labels", [](C& c, S, S v) { c.test_labels = v; }},
        {"train_subset", [](C& c, S k, S v) { c.train_subset = as_size(k, v); }},
        {"synth_classes", [](C& c, S k, S v) { c.synth_classes = as_size(k, v); }},
        {"synth_per_class", [](C& c, S k, S v) { c.synth_per_class = as_size(k, v); }},
        {"synth_dim", [](C& c, S k, S v) { c.synth_dim = as_size(k, v); }},
        {"synth_spread", [](C& c, S k, S v) { c.synth_spread = as_double(k, v); }},
        {"synth_reach", [](C& c, S k, S v) { c.synth_reach = as_double(k, v); }},
        {"synth_reach_min", [](C& c, S k, S v) { c.synth_reach_min = as_double(k, v); }},
        {"train_fraction", [](C& c, S k, S v) { c.train_fraction = as_double(k, v); }},
        {"hidden", [](C& c, S k, S v) { c.hidden = as_size_list(k, v); }},
        {"devices", [](C& c, S k, S v) { c.federation.num_devices = as_size(k, v); }},
        {"participation", [](C& c, S k, S v) { c.federation.participation = as_double(k, v); }},
        {"samples_per_device", [](C& c, S k, S v) { c.federation.samples_per_device = as_size(k, v); }},
        {"local_batches", [](C& c, S k, S v) { c.federation.local_batches = as_size(k, v); }},
        {"batch_size", [](C& c, S k, S v) { c.federation.batch_size = as_size(k, v); }},
        {"central_batch_size", [](C& c, S k, S v) { c.federation.central_batch_size = as_size(k, v); }},
        {"rounds", [](C& c, S k, S v) { c.federation.rounds = as_size(k, v); }},
        {"outer_lr", [](C& c, S k, S v) { c.federation.outer_lr = as_double(k, v); }},
        {"workers", [](C& c, S k, S v) { c.federation.workers = as_size(k, v); }},
        {"pgd_steps", [](C& c, S k, S v) { c.pgd_steps = as_size(k, v); }},
        {"inner_lr", [](C& c, S k, S v) { c.inner_lr = as_double(k, v); }},
        {"m", [](C& c, S k, S v) { c.m = as_size(k, v); }},
        {"n0", [](C& c, S k, S v) { c.n0 = as_size(k, v); }},
        {"n", [](C& c, S k, S v) { c.n = as_size(k, v); }},
        {"alpha", [](C& c, S k, S v) { c.alpha = as_double(k, v); }},
        {"test_points", [](C& c, S k, S v) { c.test_points = as_size(k, v); }},
        {"radius_max", [](C& c, S k, S v) { c.radius_max = as_double(k, v); }},
        {"radius_step", [](C& c, S k, S v) { c.radius_step = as_double(k, v); }},
        {"bench_attacks", [](C& c, S k, S v) { c.bench_attacks = as_size(k, v); }},
        {"out", [](C& c, S, S v) { c.out = v; }},
        {"checkpoint", [](C& c, S, S v) { c.checkpoint = v; }},
    };
    return table;
}

}  // namespace

AttackConfig ExperimentConfig::attack_config() const {
    AttackConfig a;
    a.epsilon = epsilon_l2();
    a.steps = pgd_steps;
    a.inner_lr = inner_lr;
    a.estimator = estimator;
    a.m = m;
    return a;
}

SmoothingConfig ExperimentConfig::smoothing_config() const {
    SmoothingConfig s;
    s.sigma = sigma;
    s.m = m;
    s.n0 = n0;
    s.n = n;
    s.alpha = alpha;
    return s;
}

TrainingRecipe ExperimentConfig::recipe() const { return {attack_config(), smoothing_config(), ablation}; }

std::vector<double> ExperimentConfig::radii() const {
    std::vector<double> r;
    const auto count = static_cast<std::size_t>(std::floor(radius_max / radius_step + 1e-9));
    // Snapped so grid values print as typed (0.15, not 0.15000000000000002).
    for (std::size_t i = 0; i <= count; ++i) r.push_back(std::round(static_cast<double>(i) * radius_step * 1e9) / 1e9);
    return r;
}

std::filesystem::path ExperimentConfig::checkpoint_path() const {
    return checkpoint.empty() ? out / "model.params" : checkpoint;
}

void ExperimentConfig::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive (got " + std::to_string(sigma) + ")");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive (got " + std::to_string(epsilon) + ")");
    if (!(radius_step > 0.0)) throw ConfigError("radius_step must be positive");
    if (!(radius_max >= 0.0)) throw ConfigError("radius_max must be nonnegative");
    if (test_points < 1) throw ConfigError("test_points must be at least 1");
    if (bench_attacks < 1) throw ConfigError("bench_attacks must be at least 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (dataset == "synth") {
        if (!(synth_reach > 0.0 && synth_reach < 0.5)) throw ConfigError("synth_reach must lie in (0, 0.5)");
        if (synth_reach_min >= 0.0 && !(synth_reach_min > 0.0 && synth_reach_min <= synth_reach)) {
            throw ConfigError("synth_reach_min must lie in (0, synth_reach]");
        }
    }
    if (dataset == "idx" && (train_images.empty() || train_labels.empty() || test_images.empty() ||
                             test_labels.empty())) {
        throw ConfigError("dataset idx needs train_images, train_labels, test_images and test_labels");
    }
    for (auto h : hidden) {
        if (h == 0) throw ConfigError("hidden widths must be positive");
    }
    federation.validate();
    attack_config().validate();
    smoothing_config().validate();
}

ConfigAssignments parse_config_lines(std::string_view text) {
    ConfigAssignments out;
    std::stringstream ss{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        }
        std::string key = trim(std::string_view(t).substr(0, eq));
        std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

std::span<const std::string_view> config_keys() {
    static const std::vector<std::string_view> keys = [] {
        std::vector<std::string_view> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

ExperimentConfig make_config(const ConfigAssignments& file_values, const ConfigAssignments& overrides) {
    std::map<std::string, std::string> merged;
    for (const auto& [k, v] : file_values) merged[k] = v;
    for (const auto& [k, v] : overrides) merged[k] = v;

    std::vector<std::string> unknown;
    for (const auto& [k, _] : merged) {
        const auto& table = setters();
        const bool known = std::any_of(table.begin(), table.end(), [&](const auto& e) { return e.first == k; });
        if (!known) unknown.push_back(k);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }

    ExperimentConfig cfg;
    // Table order puts preset first, so explicit keys refine the preset.
    for (const auto& [name, set] : setters()) {
        const auto it = merged.find(std::string(name));
        if (it != merged.end()) set(cfg, it->first, it->second);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path, const ConfigAssignments& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return make_config(parse_config_lines(buf.str()), overrides);
}

}  // namespace fedsmooth
