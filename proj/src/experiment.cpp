#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "fedsmooth/errors.hpp"
#include "fedsmooth/harness.hpp"

namespace fedsmooth {

namespace {

constexpr std::string_view kCurveHeader = "method,ablation,estimator,sigma,epsilon,gamma,radius,certified_accuracy";

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_field(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("curve csv line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

void ensure_dir(const std::filesystem::path& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

SoftClassifier classifier_for(const ParamVector& params) {
    return [&params](const Matrix& x) { return forward(params, x); };
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.dataset == "synth") {
        const Dataset all = synth_blobs(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim, cfg.synth_spread,
                                        cfg.seed, cfg.synth_reach, cfg.synth_reach_min);
        std::tie(d.train, d.test) = split(all, cfg.train_fraction, cfg.seed);
    } else {
        d.train = load_idx(cfg.train_images, cfg.train_labels).head(cfg.train_subset);
        d.test = load_idx(cfg.test_images, cfg.test_labels);
        const std::size_t c = std::max(d.train.num_classes, d.test.num_classes);
        d.train.num_classes = d.test.num_classes = c;
        if (d.train.dim() != d.test.dim()) throw FormatError("train and test images differ in size");
    }
    d.train.validate();
    d.test.validate();
    return d;
}

NetworkSpec network_for(const ExperimentConfig& cfg, const Dataset& data) {
    return NetworkSpec::mlp(data.dim(), cfg.hidden, data.num_classes);
}

TrainingResult train_model(const ExperimentConfig& cfg, const Dataset& train, const TrainingHooks& hooks) {
    const NetworkSpec spec = network_for(cfg, train);
    const ParamVector init = init_params(spec, cfg.seed);
    std::vector<Partition> partitions;
    if (cfg.mode == TrainingMode::fed_smoothadv) {
        Rng rng = substream(cfg.seed, StreamKind::partition);
        partitions = partition_heterogeneous(train.labels, train.num_classes, cfg.federation, rng);
    }
    FederationConfig fcfg = cfg.federation;
    fcfg.seed = cfg.seed;
    return run_training(train, init, partitions, cfg.recipe(), fcfg, cfg.mode, hooks);
}

std::vector<CertificationOutcome> certify_points(const SoftClassifier& classifier, const Dataset& points,
                                                 const SmoothingConfig& scfg, std::uint64_t seed,
                                                 std::size_t workers) {
    std::vector<CertificationOutcome> out(points.size());
    std::vector<std::exception_ptr> errors(points.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            try {
                Rng rng = substream(seed, StreamKind::certification, i);
                out[i] = certify(classifier, points.features.row(i), scfg, points.num_classes, rng);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(points.size(), 1));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(work);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificationOutcome> outcomes,
                                                 std::span<const std::size_t> labels, std::span<const double> radii) {
    if (outcomes.size() != labels.size()) throw ShapeError("curve: outcome count does not match label count");
    if (outcomes.empty()) throw ArgumentError("curve: no outcomes");
    for (std::size_t i = 1; i < radii.size(); ++i) {
        if (!(radii[i] > radii[i - 1])) throw ArgumentError("curve: radii must be strictly increasing");
    }
    std::vector<CurvePoint> curve;
    curve.reserve(radii.size());
    for (double r : radii) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
            const auto& o = outcomes[i];
            if (o.certified() && *o.cls == labels[i] && o.radius >= r) ++hits;
        }
        curve.push_back({r, static_cast<double>(hits) / static_cast<double>(outcomes.size())});
    }
    return curve;
}

std::vector<CurveRow> curve_rows(const ExperimentConfig& cfg, std::span<const CurvePoint> curve) {
    std::vector<CurveRow> rows;
    const TrainingRecipe recipe = cfg.recipe();
    for (const auto& p : curve) {
        rows.push_back({std::string(to_string(cfg.mode)), std::string(to_string(cfg.ablation)),
                        recipe.estimator_label(), cfg.sigma, cfg.epsilon, cfg.federation.gamma_device, p.radius,
                        p.certified_accuracy});
    }
    return rows;
}

void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows, bool header) {
    if (header) out << kCurveHeader << '\n';
    for (const auto& r : rows) {
        out << r.method << ',' << r.ablation << ',' << r.estimator << ',' << fmt(r.sigma) << ',' << fmt(r.epsilon)
            << ',' << fmt(r.gamma) << ',' << fmt(r.radius) << ',' << fmt(r.certified_accuracy) << '\n';
    }
}

std::vector<CurveRow> read_curve_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kCurveHeader) throw FormatError("curve csv: missing or wrong header");
    std::vector<CurveRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() != 8) throw FormatError("curve csv line " + std::to_string(lineno) + ": expected 8 fields");
        rows.push_back({f[0], f[1], f[2], parse_field(f[3], lineno), parse_field(f[4], lineno),
                        parse_field(f[5], lineno), parse_field(f[6], lineno), parse_field(f[7], lineno)});
    }
    return rows;
}

TrainingResult cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = load_experiment_data(cfg);
    TrainingResult result = train_model(cfg, data.train);
    ensure_dir(cfg.out);
    ensure_dir(cfg.checkpoint_path().parent_path());
    save_params(cfg.checkpoint_path(), result.params);
    std::ofstream log(cfg.out / "rounds.csv");
    if (!log) throw Error("cannot write " + (cfg.out / "rounds.csv").string());
    write_round_log(log, result.log);
    return result;
}

std::vector<CurvePoint> cmd_certify(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = load_experiment_data(cfg);
    const ParamVector params = load_params(cfg.checkpoint_path());
    if (params.spec().input_dim() != data.test.dim() || params.spec().num_classes() != data.test.num_classes) {
        throw ShapeError("checkpoint network (" + std::to_string(params.spec().input_dim()) + " inputs, " +
                         std::to_string(params.spec().num_classes()) + " classes) does not match test set (" +
                         std::to_string(data.test.dim()) + " inputs, " + std::to_string(data.test.num_classes) +
                         " classes)");
    }
    const Dataset points = data.test.head(cfg.test_points);
    const auto outcomes =
        certify_points(classifier_for(params), points, cfg.smoothing_config(), cfg.seed, cfg.federation.workers);
    const auto radii = cfg.radii();
    auto curve = certified_accuracy_curve(outcomes, points.labels, radii);
    ensure_dir(cfg.out);
    std::ofstream csv(cfg.out / "curve.csv");
    if (!csv) throw Error("cannot write " + (cfg.out / "curve.csv").string());
    write_curve_csv(csv, curve_rows(cfg, curve));
    return curve;
}

BenchReport cmd_bench_estimators(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = load_experiment_data(cfg);
    const NetworkSpec spec = network_for(cfg, data.test);
    const ParamVector params =
        cfg.checkpoint.empty() ? init_params(spec, cfg.seed) : load_params(cfg.checkpoint_path());
    if (params.spec() != spec) throw ShapeError("bench: checkpoint network does not match dataset");

    const SmoothingConfig scfg = cfg.smoothing_config();
    const std::size_t count = cfg.bench_attacks;
    std::vector<NoisePack> packs;
    packs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = substream(cfg.seed, StreamKind::bench, i);
        packs.push_back(draw_noise(scfg.m, data.test.dim(), scfg.sigma, rng));
    }

    BenchReport report;
    for (Estimator est : {Estimator::stochastic, Estimator::one_point}) {
        AttackConfig acfg = cfg.attack_config();
        acfg.estimator = est;
        BenchEntry e;
        e.estimator = est;
        e.attacks = count;
        // One untimed warm-up attack.
        smoothadv_attack(params, data.test.features.row(0), data.test.labels[0], acfg, scfg, packs[0]);
        double seconds = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t row = i % data.test.size();
            const auto x = data.test.features.row(row);
            const auto t0 = std::chrono::steady_clock::now();
            const auto xhat = smoothadv_attack(params, x, data.test.labels[row], acfg, scfg, packs[i]);
            seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            e.max_distance = std::max(e.max_distance, l2_distance(xhat, x));
            for (double v : xhat) e.checksum += v;
        }
        e.mean_seconds = seconds / static_cast<double>(count);
        report.entries.push_back(e);
    }
    report.ratio = report.entries[0].mean_seconds / report.entries[1].mean_seconds;
    return report;
}

void write_bench_report(std::ostream& out, const BenchReport& report) {
    out << "estimator,attacks,mean_seconds,max_distance,checksum\n";
    for (const auto& e : report.entries) {
        out << to_string(e.estimator) << ',' << e.attacks << ',' << fmt(e.mean_seconds) << ',' << fmt(e.max_distance)
            << ',' << fmt(e.checksum) << '\n';
    }
    out << "ratio_stochastic_over_one_point," << fmt(report.ratio) << '\n';
}

std::vector<CurveRow> cmd_ablate(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<CurveRow> all;
    for (Ablation a : {Ablation::standard, Ablation::adv_only, Ablation::adv_smooth}) {
        ExperimentConfig sub = cfg;
        sub.ablation = a;
        sub.out = cfg.out / std::string(to_string(a));
        sub.checkpoint.clear();
        cmd_train(sub);
        const auto curve = cmd_certify(sub);
        const auto rows = curve_rows(sub, curve);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    ensure_dir(cfg.out);
    std::ofstream csv(cfg.out / "ablation.csv");
    if (!csv) throw Error("cannot write " + (cfg.out / "ablation.csv").string());
    write_curve_csv(csv, all);
    return all;
}

}  // namespace fedsmooth
