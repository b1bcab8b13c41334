#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "prunelab/errors.hpp"
#include "prunelab/oracles.hpp"
#include "prunelab/schedule.hpp"
#include "prunelab/tasks.hpp"

namespace prunelab::oracles {
namespace {

Tensor2D random_normal(std::size_t r, std::size_t c, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Tensor2D t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
    return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
    std::vector<int> y(n);
    for (auto& v : y) v = pick(rng);
    return y;
}

ReportRow upper_bound_row(std::string name, double metric, double threshold, bool inclusive = false) {
    const bool ok = inclusive ? metric <= threshold : metric < threshold;
    return {std::move(name), ok ? Status::pass : Status::fail, metric, threshold};
}

// Worst FD error over `seeds` small networks with random masks or frozen noise.
double network_fd(ModelKind kind, PrunerVariant variant, int seeds, std::uint64_t base) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(base + static_cast<std::uint64_t>(s));
        ModelSpec spec;
        spec.kind = kind;
        spec.num_classes = 3;
        if (kind == ModelKind::mlp) {
            spec.input_dim = 6;
            spec.hidden_width = 5;
            spec.hidden_layers = 3;
        } else {
            spec.input_dim = 8;
            spec.seq_len = 4;
            spec.model_dim = 4;
            spec.blocks = 1;
        }
        auto model = make_model(spec, rng());
        PrunerConfig pruner;
        pruner.variant = variant;
        pruner.lambda_l0 = 0.05;
        auto layers = model->prunable_layers();
        for (auto* layer : layers) {
            layer->scores = random_normal(layer->weights.rows(), layer->weights.cols(), rng);
        }
        // Zero biases behind a fully masked row sit exactly on the ReLU kink.
        for (auto& p : model->dense_params()) p.value = random_normal(p.value.rows(), p.value.cols(), rng, 0.5);
        if (variant != PrunerVariant::l0) refresh_masks(layers, pruner, 0.6, Mode::train);
        const Tensor2D x = random_normal(spec.input_dim, 4, rng);
        const auto y = random_labels(4, spec.num_classes, rng);
        const auto report = network_gradient_check(*model, x, y, &pruner, rng());
        worst = std::max(worst, report.max_relative_error);
    }
    return worst;
}

std::size_t topv_local_mismatches(int matrices, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> level(0, 4);
    std::size_t bad = 0;
    for (int i = 0; i < matrices; ++i) {
        Tensor2D s(5, 5);
        for (std::size_t e = 0; e < s.size(); ++e) s[e] = level(rng) * 0.25;
        for (int g = 0; g <= 20; ++g) {
            const double v = g / 20.0;
            if (!(topv_local(s, v) == brute_force_topv(s, v))) ++bad;
        }
    }
    return bad;
}

std::size_t topv_global_mismatches(int collections, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count(1, 4);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    std::uniform_int_distribution<int> level(0, 6);
    std::size_t bad = 0;
    for (int i = 0; i < collections; ++i) {
        std::vector<Tensor2D> scores;
        const int m = count(rng);
        for (int k = 0; k < m; ++k) {
            Tensor2D s(dim(rng), dim(rng));
            for (std::size_t e = 0; e < s.size(); ++e) s[e] = level(rng) - 3.0;
            scores.push_back(std::move(s));
        }
        for (int g = 0; g <= 20; ++g) {
            const double v = g / 20.0;
            if (topv_global(std::span<const Tensor2D>(scores), v) != brute_force_topv_global(scores, v)) ++bad;
        }
    }
    return bad;
}

// Reference cubic ramp written from the defining formula.
double reference_sparsity(const SparsitySchedule& s, std::int64_t t) {
    if (t < s.warmup) return s.initial;
    if (t >= s.total - s.cooldown) return s.final;
    const double frac = static_cast<double>(t - s.warmup) / static_cast<double>(s.total - s.warmup - s.cooldown);
    return s.final + (s.initial - s.final) * std::pow(1.0 - frac, 3);
}

double schedule_violations(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    std::uniform_int_distribution<std::int64_t> len(1, 400);
    double bad = 0.0;
    for (int i = 0; i < 100; ++i) {
        SparsitySchedule s;
        s.total = len(rng);
        s.initial = frac(rng) * 0.3;
        s.final = s.initial + frac(rng) * (1.0 - s.initial);
        s.warmup = std::uniform_int_distribution<std::int64_t>(0, s.total / 2)(rng);
        s.cooldown = std::uniform_int_distribution<std::int64_t>(0, s.total - s.warmup)(rng);
        if (sparsity_at(s, 0) != s.initial && s.warmup + s.cooldown < s.total) bad += 1;
        if (sparsity_at(s, s.total) != s.final) bad += 1;
        double prev = sparsity_at(s, 0);
        for (std::int64_t t = 1; t <= s.total; ++t) {
            const double v = sparsity_at(s, t);
            if (v < prev) bad += 1;
            prev = v;
        }
        SparsitySchedule base = s;
        base.cooldown = 0;
        for (std::int64_t t = 0; t <= base.total; ++t) {
            if (std::abs(sparsity_at(base, t) - reference_sparsity(base, t)) > 1e-12) bad += 1;
        }
    }
    return bad;
}

double expected_l0_max_z(std::uint64_t seed, std::size_t samples) {
    std::mt19937_64 rng(seed);
    const HardConcreteParams params;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Tensor2D s = random_normal(3, 3, rng, 2.0);
        const auto mc = monte_carlo_l0(s, params, samples, rng());
        const double z = std::abs(mc.estimate - expected_l0(s, params)) / std::max(mc.standard_error, 1e-12);
        worst = std::max(worst, z);
    }
    return worst;
}

double test_mask_deviation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const HardConcreteParams p;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Tensor2D s = random_normal(4, 6, rng, 3.0);
        const Mask m = hard_concrete_test_mask(s, p);
        for (std::size_t e = 0; e < s.size(); ++e) {
            const double sig = 1.0 / (1.0 + std::exp(-s[e]));
            const double hand = std::min(1.0, std::max(0.0, sig * (p.r - p.l) + p.l));
            worst = std::max(worst, std::abs(m[e] - hand));
        }
    }
    return worst;
}

struct SwapSweep {
    std::size_t seeds_with_swaps = 0;
    std::size_t events = 0;
    std::size_t decreased = 0;
    std::size_t seeds_with_increase = 0;
};

SwapSweep sweep_swaps(const SwapHarnessConfig& config, std::size_t wanted, std::size_t max_seeds, std::uint64_t base,
                      bool stop_on_increase = false) {
    SwapSweep out;
    for (std::size_t s = 0; s < max_seeds && out.seeds_with_swaps < wanted; ++s) {
        const auto res = swap_loss_harness(config, random_swap_instance(config, base + s));
        if (res.events.empty()) continue;
        ++out.seeds_with_swaps;
        bool increased = false;
        for (const auto& e : res.events) {
            ++out.events;
            if (e.loss_decreased()) {
                ++out.decreased;
            } else {
                increased = true;
            }
        }
        if (increased) {
            ++out.seeds_with_increase;
            if (stop_on_increase) break;
        }
    }
    return out;
}

ReportRow swap_row(std::string name, const SwapSweep& s, std::size_t wanted) {
    ReportRow row{std::move(name), Status::pass, 0.0, 1.0};
    if (s.seeds_with_swaps < wanted) {
        row.status = Status::inconclusive;
        row.metric = static_cast<double>(s.seeds_with_swaps);
        row.threshold = static_cast<double>(wanted);
        return row;
    }
    row.metric = static_cast<double>(s.decreased) / static_cast<double>(s.events);
    row.status = s.decreased == s.events ? Status::pass : Status::fail;
    return row;
}

struct TraceRun {
    double replay_deviation = 0.0;
    std::size_t replay_entries = 0;
    std::size_t sign_checked = 0;
    std::size_t sign_violations = 0;
    std::size_t masked_changed = 0;
    std::size_t masked_seen = 0;
};

TraceRun movement_trace(std::int64_t steps, std::uint64_t seed, double score_grad_sign) {
    TaskSpec ts;
    ts.seed = seed;
    ts.train_size = 512;
    ts.eval_size = 64;
    const TaskPair tasks = generate_tasks(ts);
    auto model = make_model(ModelSpec{}, seed + 1);

    FinePruneRequest req;
    req.pruner.variant = PrunerVariant::movement;
    req.pruner.score_grad_sign = score_grad_sign;
    req.pruner.score_optimizer = OptimizerSettings{OptimizerKind::sgd, 1e-2, 0.0};
    req.schedule = SparsitySchedule::with_default_phases(0.0, 0.5, steps);
    req.optimizer.lr_weights = 1e-2;
    req.optimizer.steps = steps;
    req.optimizer.seed = seed;
    req.optimizer.log_every = steps;

    AccumulatorReplay replay(req.pruner.score_optimizer);
    SignPropertyChecker sign;
    MaskedWeightWatcher watcher;
    fineprune(*model, tasks.target_train, Dataset{}, req,
              combine({replay.observer(), sign.observer(),
                       [&watcher](const StepObservation& o) { watcher.observe(o); }}));

    const auto layers = std::as_const(*model).prunable_layers();
    TraceRun out;
    out.replay_deviation = replay.max_deviation(layers);
    out.replay_entries = replay.tracked_entries();
    out.sign_checked = sign.checked();
    out.sign_violations = sign.violations();
    out.masked_changed = watcher.changed();
    out.masked_seen = watcher.masked_seen();
    return out;
}

}  // namespace

std::vector<ReportRow> run_suite(const SuiteOptions& options) {
    const std::uint64_t seed = options.seed;
    std::vector<ReportRow> rows;
    auto log_row = [&](const ReportRow& r) {
        spdlog::debug("{:<34} {:<12} metric={} threshold={}", r.oracle, to_string(r.status), r.metric, r.threshold);
    };
    auto add = [&](ReportRow r) {
        log_row(r);
        rows.push_back(std::move(r));
    };

    {
        const Tensor2D p(3, 4, 1.0);
        Tensor2D grad = p;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 2.0 * p[i];
        auto f = [](const Tensor2D& t) {
            double s = 0.0;
            for (double v : t.values()) s += v * v;
            return s;
        };
        add(upper_bound_row("fd_quadratic", finite_difference_check(f, p, grad), 1e-9));
    }
    {
        double worst = 0.0;
        for (int s = 0; s < 20; ++s) worst = std::max(worst, score_gradient_contract_deviation(seed + s));
        add(upper_bound_row("score_gradient_exact", worst, 0.0, true));
    }
    add(upper_bound_row("fd_mlp_weights", network_fd(ModelKind::mlp, PrunerVariant::movement, 20, seed + 100), 1e-5));
    add(upper_bound_row("fd_mlp_hard_concrete", network_fd(ModelKind::mlp, PrunerVariant::l0, 20, seed + 200), 1e-5));
    add(upper_bound_row("fd_transformer_weights",
                        network_fd(ModelKind::mini_transformer, PrunerVariant::movement, 20, seed + 300), 1e-5));
    add(upper_bound_row("fd_transformer_hard_concrete",
                        network_fd(ModelKind::mini_transformer, PrunerVariant::l0, 20, seed + 400), 1e-5));

    add(upper_bound_row("topv_local_vs_sort", static_cast<double>(topv_local_mismatches(1000, seed + 500)), 0.0,
                        true));
    add(upper_bound_row("topv_global_vs_sort", static_cast<double>(topv_global_mismatches(200, seed + 600)), 0.0,
                        true));
    add(upper_bound_row("schedule_endpoints_monotone", schedule_violations(seed + 700), 0.0, true));

    add(upper_bound_row("expected_l0_monte_carlo_z", expected_l0_max_z(seed + 800, 100000), 3.0, true));
    add(upper_bound_row("hard_concrete_test_mask", test_mask_deviation(seed + 900), 1e-12, true));

    const TraceRun replay = movement_trace(50, seed + 1000, options.score_grad_sign);
    {
        ReportRow r = upper_bound_row("accumulator_replay", replay.replay_deviation, 1e-10);
        if (replay.replay_entries == 0) r.status = Status::inconclusive;
        add(r);
    }
    const TraceRun long_run = movement_trace(200, seed + 1100, options.score_grad_sign);
    {
        ReportRow r{"sign_property", long_run.sign_violations == 0 ? Status::pass : Status::fail,
                    static_cast<double>(long_run.sign_violations), 0.0};
        if (long_run.sign_checked == 0) r.status = Status::inconclusive;
        add(r);
        add(upper_bound_row("masked_weights_frozen", static_cast<double>(long_run.masked_changed), 0.0, true));
    }

    {
        SwapHarnessConfig c;
        add(swap_row("swap_topk_k1", sweep_swaps(c, 100, 2000, seed + 2000), 100));
        c.lr_weights = 0.0;
        add(swap_row("swap_topk_k1_frozen_weights", sweep_swaps(c, 100, 2000, seed + 3000), 100));
        c.lr_weights = 1e-4;
        c.rule = SwapRule::threshold;
        c.tau = 0.1;
        add(swap_row("swap_threshold", sweep_swaps(c, 50, 5000, seed + 4000), 50));
        c.rule = SwapRule::topk;
        c.inputs = 4;
        c.k = 2;
        add(swap_row("swap_topk_k2_pairs", sweep_swaps(c, 20, 5000, seed + 5000), 20));
    }
    {
        SwapHarnessConfig c;
        c.rule = SwapRule::negative_threshold;
        c.tau = -0.1;
        const SwapSweep s = sweep_swaps(c, 1000, 1000, seed + 6000, true);
        const double found = static_cast<double>(s.seeds_with_increase);
        add({"negative_threshold_counterexample", found >= 1.0 ? Status::pass : Status::fail, found, 1.0});
    }
    return rows;
}

bool all_passed(std::span<const ReportRow> rows) {
    return std::none_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.status == Status::fail; });
}

void write_report_csv(std::span<const ReportRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "oracle,status,metric,threshold\n";
    for (const auto& r : rows) {
        out << r.oracle << ',' << to_string(r.status) << ',' << format_double(r.metric) << ','
            << format_double(r.threshold) << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace prunelab::oracles
