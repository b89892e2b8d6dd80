#pragma once

// Experiment driver: configuration, training/certification workflows,
// certified-accuracy curves, ablations and the estimator benchmark.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsmooth/attack.hpp"
#include "fedsmooth/data.hpp"
#include "fedsmooth/federation.hpp"
#include "fedsmooth/nn.hpp"
#include "fedsmooth/smoothing.hpp"

namespace fedsmooth {

enum class Preset { desk, paper };

struct ExperimentConfig {
    Preset preset = Preset::desk;
    TrainingMode mode = TrainingMode::fed_smoothadv;
    Ablation ablation = Ablation::adv_smooth;
    Estimator estimator = Estimator::stochastic;
    double sigma = 0.25;
    double epsilon = 128.0;  // pixel-scale; the l2 budget is epsilon / 256
    std::uint64_t seed = 0;

    // "synth" or "idx"
    std::string dataset = "synth";
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::size_t train_subset = 2000;  // idx: rows kept from the training file
    std::size_t synth_classes = 10;
    std::size_t synth_per_class = 300;
    std::size_t synth_dim = 256;
    double synth_spread = 0.02;
    double synth_reach = 0.35;
    double synth_reach_min = 0.08;  // negative: same as synth_reach
    double train_fraction = 2.0 / 3.0;

    std::vector<std::size_t> hidden = {256, 128};
    FederationConfig federation = FederationConfig::desk_scale();

    std::size_t pgd_steps = 2;
    double inner_lr = 0.01;
    std::size_t m = 2;
    std::size_t n0 = 100;
    std::size_t n = 1000;
    double alpha = 0.001;

    std::size_t test_points = 200;
    double radius_max = 1.5;
    double radius_step = 0.05;
    std::size_t bench_attacks = 500;

    std::filesystem::path out = "out";
    std::filesystem::path checkpoint;  // empty = <out>/model.params

    double epsilon_l2() const { return epsilon / 256.0; }
    AttackConfig attack_config() const;
    SmoothingConfig smoothing_config() const;
    TrainingRecipe recipe() const;
    std::vector<double> radii() const;
    std::filesystem::path checkpoint_path() const;

    void validate() const;
};

/// Ordered key -> value assignments; later entries win.
using ConfigAssignments = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines ('#' starts a comment). Throws ConfigError.
ConfigAssignments parse_config_lines(std::string_view text);

/// Builds a config from file assignments followed by overrides. The preset
/// key is applied first so explicit keys refine it. Unknown keys are
/// reported together; type errors name the key and the expected type.
ExperimentConfig make_config(const ConfigAssignments& file_values, const ConfigAssignments& overrides = {});

ExperimentConfig parse_config(const std::filesystem::path& path, const ConfigAssignments& overrides = {});

/// Every recognised key, in documentation order.
std::span<const std::string_view> config_keys();

struct ExperimentData {
    Dataset train;
    Dataset test;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

NetworkSpec network_for(const ExperimentConfig& cfg, const Dataset& data);

/// Partitions, initialization and the full training loop.
TrainingResult train_model(const ExperimentConfig& cfg, const Dataset& train, const TrainingHooks& hooks = {});

/// Certifies every row of `points`; point i uses its own random stream, so
/// results do not depend on `workers`.
std::vector<CertificationOutcome> certify_points(const SoftClassifier& classifier, const Dataset& points,
                                                 const SmoothingConfig& scfg, std::uint64_t seed,
                                                 std::size_t workers = 1);

struct CurvePoint {
    double radius = 0.0;
    double certified_accuracy = 0.0;
};

/// Fraction of points certified with the correct label at radius >= r.
std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificationOutcome> outcomes,
                                                 std::span<const std::size_t> labels, std::span<const double> radii);

struct CurveRow {
    std::string method;
    std::string ablation;
    std::string estimator;
    double sigma = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    double radius = 0.0;
    double certified_accuracy = 0.0;

    bool operator==(const CurveRow&) const = default;
};

std::vector<CurveRow> curve_rows(const ExperimentConfig& cfg, std::span<const CurvePoint> curve);

/// header method,ablation,estimator,sigma,epsilon,gamma,radius,certified_accuracy
void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows, bool header = true);
std::vector<CurveRow> read_curve_csv(std::istream& in);

/// Writes <out>/model.params and <out>/rounds.csv.
TrainingResult cmd_train(const ExperimentConfig& cfg);

/// Certifies the first test_points test rows with the checkpoint and writes
/// <out>/curve.csv.
std::vector<CurvePoint> cmd_certify(const ExperimentConfig& cfg);

struct BenchEntry {
    Estimator estimator = Estimator::stochastic;
    std::size_t attacks = 0;
    double mean_seconds = 0.0;
    double max_distance = 0.0;  // largest ||xhat - x||_2 observed
    double checksum = 0.0;      // sum of every output coordinate
};

struct BenchReport {
    std::vector<BenchEntry> entries;  // stochastic, then one_point
    double ratio = 0.0;               // stochastic / one_point mean time
};

BenchReport cmd_bench_estimators(const ExperimentConfig& cfg);
void write_bench_report(std::ostream& out, const BenchReport& report);

/// Trains and certifies standard, adv_only and adv_smooth back to back;
/// writes <out>/ablation.csv.
std::vector<CurveRow> cmd_ablate(const ExperimentConfig& cfg);

}  // namespace fedsmooth
