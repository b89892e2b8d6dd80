#include "fedsmooth/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <thread>

#include "fedsmooth/errors.hpp"

namespace fedsmooth {

namespace {

// Draws `count` distinct elements of pool (pool order is destroyed).
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count)};
}

template <class E>
[[noreturn]] void rethrow_with_context(const E& e, const std::string& context) {
    throw E(context + ": " + e.what());
}

}  // namespace

std::string_view to_string(Ablation a) {
    switch (a) {
        case Ablation::standard:
            return "standard";
        case Ablation::adv_only:
            return "adv_only";
        case Ablation::adv_smooth:
            return "adv_smooth";
    }
    return "?";
}

std::string_view to_string(TrainingMode m) {
    return m == TrainingMode::fed_smoothadv ? "fed_smoothadv" : "smoothadv";
}

Ablation parse_ablation(std::string_view s) {
    if (s == "standard") return Ablation::standard;
    if (s == "adv_only") return Ablation::adv_only;
    if (s == "adv_smooth") return Ablation::adv_smooth;
    throw ConfigError("unknown ablation '" + std::string(s) + "' (expected standard, adv_only or adv_smooth)");
}

FederationConfig FederationConfig::paper_scale() {
    FederationConfig c;
    c.num_devices = 1000;
    c.participation = 0.1;
    c.samples_per_device = 500;
    c.local_batches = 20;
    c.batch_size = 30;
    c.central_batch_size = 60;
    c.rounds = 150;
    c.outer_lr = 0.01;
    return c;
}

FederationConfig FederationConfig::desk_scale() {
    // 30 rounds at 0.01 leaves the small desk model badly undertrained
    FederationConfig c;
    c.outer_lr = 0.1;
    return c;
}

std::size_t FederationConfig::clients_per_round() const {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(num_devices) * participation - 1e-9));
}

void FederationConfig::validate() const {
    if (num_devices < 1) throw ConfigError("devices must be at least 1");
    if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must lie in (0, 1]");
    if (clients_per_round() < 1) throw ConfigError("participation selects no devices");
    if (samples_per_device < 1) throw ConfigError("samples_per_device must be at least 1");
    if (!(gamma_device > 0.0 && gamma_device < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (batch_size < 1 || central_batch_size < 1) throw ConfigError("batch sizes must be at least 1");
    if (!(outer_lr >= 0.0)) throw ConfigError("outer_lr must be nonnegative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

std::vector<Partition> partition_heterogeneous(std::span<const std::size_t> labels, std::size_t num_classes,
                                               const FederationConfig& cfg, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw ConfigError("label " + std::to_string(labels[i]) + " out of range");
        by_class[labels[i]].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (by_class[c].empty()) throw ConfigError("class " + std::to_string(c) + " has no examples to partition");
    }
    const std::size_t n_k = cfg.samples_per_device;
    const auto n_major = static_cast<std::size_t>(std::floor(cfg.gamma_device * static_cast<double>(n_k)));
    const std::size_t n_rest = n_k - n_major;

    std::uniform_int_distribution<std::size_t> pick_class(0, num_classes - 1);
    std::vector<Partition> parts;
    parts.reserve(cfg.num_devices);
    for (std::size_t k = 0; k < cfg.num_devices; ++k) {
        Partition p;
        p.device_id = k;
        p.major_class = pick_class(rng);
        auto major_pool = by_class[p.major_class];
        if (major_pool.size() < n_major) {
            throw ConfigError("class " + std::to_string(p.major_class) + " has " + std::to_string(major_pool.size()) +
                              " examples, device needs " + std::to_string(n_major));
        }
        std::vector<std::size_t> other_pool;
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (c != p.major_class) other_pool.insert(other_pool.end(), by_class[c].begin(), by_class[c].end());
        }
        if (other_pool.size() < n_rest) {
            throw ConfigError("classes other than " + std::to_string(p.major_class) + " hold only " +
                              std::to_string(other_pool.size()) + " examples, device needs " + std::to_string(n_rest));
        }
        p.indices = draw_without_replacement(major_pool, n_major, rng);
        const auto rest = draw_without_replacement(other_pool, n_rest, rng);
        p.indices.insert(p.indices.end(), rest.begin(), rest.end());
        parts.push_back(std::move(p));
    }
    return parts;
}

std::vector<std::size_t> sample_clients(std::size_t num_devices, double participation, std::size_t round,
                                        std::uint64_t seed) {
    FederationConfig probe;
    probe.num_devices = num_devices;
    probe.participation = participation;
    const std::size_t count = probe.clients_per_round();
    std::vector<std::size_t> ids(num_devices);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (count >= num_devices) return ids;
    Rng rng = substream(seed, StreamKind::client_sampling, round);
    auto chosen = draw_without_replacement(ids, count, rng);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

std::string TrainingRecipe::estimator_label() const {
    switch (ablation) {
        case Ablation::standard:
            return "none";
        case Ablation::adv_only:
            return "stochastic";
        case Ablation::adv_smooth:
            return std::string(to_string(attack.estimator));
    }
    return "?";
}

LocalResult local_train(const ParamVector& theta, const Partition& partition, const Dataset& data,
                        const TrainingRecipe& recipe, const FederationConfig& fcfg, Rng& rng,
                        const AccessTracer* tracer) {
    LocalResult out{theta, 0.0, 0};
    if (fcfg.local_batches == 0) return out;
    if (partition.indices.empty()) throw ArgumentError("device " + std::to_string(partition.device_id) + " has no data");
    for (auto row : partition.indices) {
        if (row >= data.size()) throw ArgumentError("partition index out of range");
    }

    const std::size_t d = data.dim();
    const std::size_t b = fcfg.batch_size;
    const std::size_t per_example = recipe.ablation == Ablation::adv_smooth ? recipe.smoothing.m : 1;

    AttackConfig acfg = recipe.attack;
    if (recipe.ablation == Ablation::adv_only) {
        acfg.estimator = Estimator::stochastic;
        acfg.m = 1;
    }

    std::vector<std::size_t> order(partition.indices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();

    double loss_sum = 0.0;
    for (std::size_t step = 0; step < fcfg.local_batches; ++step) {
        Batch list;
        list.inputs = Matrix(b * per_example, d);
        list.labels.reserve(b * per_example);
        std::size_t next_row = 0;
        for (std::size_t j = 0; j < b; ++j) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const std::size_t row = partition.indices[order[cursor++]];
            if (tracer && *tracer) (*tracer)(partition.device_id, row);
            const auto x = data.features.row(row);
            const std::size_t y = data.labels[row];

            switch (recipe.ablation) {
                case Ablation::standard: {
                    std::copy(x.begin(), x.end(), list.inputs.row(next_row++).begin());
                    break;
                }
                case Ablation::adv_only: {
                    const NoisePack none = zero_noise(1, d);
                    const auto xhat = smoothadv_attack(out.params, x, y, acfg, recipe.smoothing, none);
                    std::copy(xhat.begin(), xhat.end(), list.inputs.row(next_row++).begin());
                    break;
                }
                case Ablation::adv_smooth: {
                    const NoisePack noise = draw_noise(recipe.smoothing.m, d, recipe.smoothing.sigma, rng);
                    const auto xhat = smoothadv_attack(out.params, x, y, acfg, recipe.smoothing, noise);
                    for (std::size_t i = 0; i < noise.size(); ++i) {
                        auto dst = list.inputs.row(next_row++);
                        const auto delta = noise.deltas.row(i);
                        for (std::size_t c = 0; c < d; ++c) dst[c] = xhat[c] + delta[c];
                    }
                    break;
                }
            }
            for (std::size_t i = 0; i < per_example; ++i) list.labels.push_back(y);
        }
        const LossAndGrad lg = loss_and_param_grad(out.params, list);
        loss_sum += lg.loss;
        out.params = sgd_step(out.params, lg.grad, fcfg.outer_lr);
        out.list_size = list.labels.size();
    }
    out.mean_loss = loss_sum / static_cast<double>(fcfg.local_batches);
    return out;
}

ParamVector aggregate(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw ArgumentError("aggregate: no updates");
    std::size_t total = 0;
    for (const auto& u : updates) {
        if (u.params.size() != updates.front().params.size()) throw ShapeError("aggregate: parameter length mismatch");
        total += u.num_samples;
    }
    if (total == 0) throw ArgumentError("aggregate: updates carry no samples");
    ParamVector out(updates.front().params.spec());
    auto acc = out.values();
    for (const auto& u : updates) {
        const double w = static_cast<double>(u.num_samples) / static_cast<double>(total);
        axpy(w, u.params.values(), acc);
    }
    return out;
}

TrainingResult run_training(const Dataset& data, const ParamVector& init, std::span<const Partition> partitions,
                            const TrainingRecipe& recipe, const FederationConfig& fcfg, TrainingMode mode,
                            const TrainingHooks& hooks) {
    fcfg.validate();
    recipe.attack.validate();
    recipe.smoothing.validate();
    if (init.spec().input_dim() != data.dim()) throw ShapeError("network input dim does not match dataset");
    if (mode == TrainingMode::fed_smoothadv && partitions.size() != fcfg.num_devices) {
        throw ConfigError("expected " + std::to_string(fcfg.num_devices) + " partitions, got " +
                          std::to_string(partitions.size()));
    }

    // Centralized learner: one pseudo-device holding every row.
    Partition pooled;
    FederationConfig central_cfg = fcfg;
    if (mode == TrainingMode::centralized_smoothadv) {
        pooled.indices.resize(data.size());
        std::iota(pooled.indices.begin(), pooled.indices.end(), std::size_t{0});
        const std::size_t examples = fcfg.clients_per_round() * fcfg.local_batches * fcfg.batch_size;
        central_cfg.batch_size = fcfg.central_batch_size;
        // At least one step, or a tiny budget would leave the model untouched.
        central_cfg.local_batches =
            std::max<std::size_t>(1, (examples + fcfg.central_batch_size / 2) / fcfg.central_batch_size);
    }

    TrainingResult result{init, {}};
    result.log.reserve(fcfg.rounds);
    const std::string estimator = recipe.estimator_label();
    const AccessTracer* tracer = hooks.tracer ? &hooks.tracer : nullptr;

    for (std::size_t t = 0; t < fcfg.rounds; ++t) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<ClientUpdate> updates;
        double loss_sum = 0.0;

        if (mode == TrainingMode::centralized_smoothadv) {
            Rng rng = substream(fcfg.seed, StreamKind::device_training, 0, t);
            try {
                auto local = local_train(result.params, pooled, data, recipe, central_cfg, rng, nullptr);
                loss_sum = local.mean_loss;
                updates.push_back({std::move(local.params), pooled.indices.size()});
            } catch (const NumericError& e) {
                rethrow_with_context(e, "round " + std::to_string(t + 1) + ", centralized");
            }
        } else {
            const auto clients = sample_clients(fcfg.num_devices, fcfg.participation, t, fcfg.seed);
            std::vector<LocalResult> results(clients.size());
            std::vector<std::exception_ptr> errors(clients.size());
            std::atomic<std::size_t> next{0};
            const ParamVector& global = result.params;
            auto worker = [&] {
                for (std::size_t i = next++; i < clients.size(); i = next++) {
                    const std::size_t k = clients[i];
                    try {
                        Rng rng = substream(fcfg.seed, StreamKind::device_training, k, t);
                        results[i] = local_train(global, partitions[k], data, recipe, fcfg, rng, tracer);
                    } catch (const NumericError& e) {
                        try {
                            rethrow_with_context(e, "round " + std::to_string(t + 1) + ", device " + std::to_string(k));
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            };
            const std::size_t n_threads = std::min(fcfg.workers, clients.size());
            if (n_threads <= 1) {
                worker();
            } else {
                std::vector<std::jthread> pool;
                for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker);
            }
            for (auto& e : errors) {
                if (e) std::rethrow_exception(e);
            }
            for (std::size_t i = 0; i < clients.size(); ++i) {
                loss_sum += results[i].mean_loss;
                updates.push_back({std::move(results[i].params), partitions[clients[i]].indices.size()});
            }
            loss_sum /= static_cast<double>(clients.size());
        }

        result.params = aggregate(updates);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back({t + 1, mode, estimator, loss_sum, secs});
        if (hooks.on_round) hooks.on_round(t + 1, result.params);
    }
    return result;
}

void write_round_log(std::ostream& out, std::span<const RoundLogEntry> log) {
    out << "round,mode,estimator,mean_loss,seconds\n";
    out << std::setprecision(17);
    for (const auto& e : log) {
        out << e.round << ',' << to_string(e.mode) << ',' << e.estimator << ',' << e.mean_loss << ',' << e.seconds
            << '\n';
    }
}

}  // namespace fedsmooth
