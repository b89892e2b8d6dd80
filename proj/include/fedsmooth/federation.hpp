#pragma once

// In-process simulation of synchronous federated SmoothAdv training:
// non-IID partitioning, per-round client sampling, local adversarial
// training on smoothed classifiers and sample-weighted aggregation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsmooth/attack.hpp"
#include "fedsmooth/data.hpp"
#include "fedsmooth/nn.hpp"
#include "fedsmooth/rng.hpp"
#include "fedsmooth/smoothing.hpp"

namespace fedsmooth {

/// What local training does with each minibatch.
enum class Ablation {
    standard,    // clean examples, no attack, no noise
    adv_only,    // l2 PGD against the base classifier, no noise
    adv_smooth,  // SmoothAdv: PGD against the smoothed classifier + noise augmentation
};

enum class TrainingMode { fed_smoothadv, centralized_smoothadv };

std::string_view to_string(Ablation a);
std::string_view to_string(TrainingMode m);
Ablation parse_ablation(std::string_view s);

struct FederationConfig {
    std::size_t num_devices = 20;
    double participation = 0.1;
    std::size_t samples_per_device = 100;
    double gamma_device = 0.5;
    std::size_t local_batches = 20;
    std::size_t batch_size = 30;
    std::size_t central_batch_size = 60;
    std::size_t rounds = 30;
    double outer_lr = 0.01;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    /// 1000 devices x 500 samples, 10% participation, 150 rounds.
    static FederationConfig paper_scale();
    /// 20 devices x 100 samples, 30 rounds, outer rate 0.1.
    static FederationConfig desk_scale();

    std::size_t clients_per_round() const;
    void validate() const;
};

struct Partition {
    std::size_t device_id = 0;
    std::size_t major_class = 0;
    std::vector<std::size_t> indices;  // rows of the training set
};

/// floor(gamma * n_k) rows from a uniformly drawn major class, the rest
/// uniformly from the pooled other classes; no repeats within a device.
std::vector<Partition> partition_heterogeneous(std::span<const std::size_t> labels, std::size_t num_classes,
                                               const FederationConfig& cfg, Rng& rng);

/// ceil(K * participation) distinct device ids, sorted; a function of
/// (seed, round) only.
std::vector<std::size_t> sample_clients(std::size_t num_devices, double participation, std::size_t round,
                                        std::uint64_t seed);

/// Called for every dataset row a device reads.
using AccessTracer = std::function<void(std::size_t device, std::size_t row)>;

struct TrainingRecipe {
    AttackConfig attack;
    SmoothingConfig smoothing;
    Ablation ablation = Ablation::adv_smooth;

    /// Estimator name recorded in round logs ("none" for standard training).
    std::string estimator_label() const;
};

struct LocalResult {
    ParamVector params;
    double mean_loss = 0.0;
    /// Size of the training list built for each minibatch.
    std::size_t list_size = 0;
};

/// fcfg.local_batches minibatches of fcfg.batch_size drawn from the
/// partition; each minibatch builds the adversarial list and takes one SGD
/// step with fcfg.outer_lr. theta is not modified.
LocalResult local_train(const ParamVector& theta, const Partition& partition, const Dataset& data,
                        const TrainingRecipe& recipe, const FederationConfig& fcfg, Rng& rng,
                        const AccessTracer* tracer = nullptr);

struct ClientUpdate {
    ParamVector params;
    std::size_t num_samples = 0;
};

/// sum_k (n_k / n) theta_k with n summed over the given updates.
ParamVector aggregate(std::span<const ClientUpdate> updates);

struct RoundLogEntry {
    std::size_t round = 0;
    TrainingMode mode = TrainingMode::fed_smoothadv;
    std::string estimator;
    double mean_loss = 0.0;
    double seconds = 0.0;
};

struct TrainingResult {
    ParamVector params;
    std::vector<RoundLogEntry> log;
};

struct TrainingHooks {
    AccessTracer tracer;
    /// Receives the global parameters after each round.
    std::function<void(std::size_t round, const ParamVector&)> on_round;
};

/// Runs fcfg.rounds rounds. Federated mode trains the sampled devices on
/// their partitions; centralized mode trains one learner on the whole set
/// with central_batch_size batches, the same number of examples per round,
/// and the random stream device 0 would use.
TrainingResult run_training(const Dataset& data, const ParamVector& init, std::span<const Partition> partitions,
                            const TrainingRecipe& recipe, const FederationConfig& fcfg, TrainingMode mode,
                            const TrainingHooks& hooks = {});

/// CSV with header round,mode,estimator,mean_loss,seconds
void write_round_log(std::ostream& out, std::span<const RoundLogEntry> log);

}  // namespace fedsmooth
