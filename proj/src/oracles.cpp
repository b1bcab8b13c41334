#include "prunelab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "prunelab/errors.hpp"

namespace prunelab::oracles {

std::string_view to_string(Status s) {
    switch (s) {
        case Status::pass: return "PASS";
        case Status::fail: return "FAIL";
        case Status::inconclusive: return "INCONCLUSIVE";
    }
    return "?";
}

// --- finite differences -----------------------------------------------------

double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
    return std::abs(analytic - numeric) / scale;
}

double finite_difference_check(const ScalarFn& f, const Tensor2D& point, const Tensor2D& analytic, double h) {
    if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
    require_same_shape(point, analytic, "finite_difference_check");
    double worst = 0.0;
    Tensor2D probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + h;
        const double up = f(probe);
        probe[i] = point[i] - h;
        const double down = f(probe);
        probe[i] = point[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw DomainError("finite_difference_check: f is not finite near entry " + std::to_string(i));
        }
        worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

NetworkGradientReport network_gradient_check(const Model& model_in, const Tensor2D& x, std::span<const int> labels,
                                             const PrunerConfig* pruner, std::uint64_t noise_seed, double h) {
    auto model = model_in.clone();
    auto layers = model->prunable_layers();
    const bool l0 = pruner && pruner->variant == PrunerVariant::l0;
    const std::int64_t reg_step = pruner ? pruner->lambda_warmup_steps : 0;

    std::vector<Tensor2D> noise;
    auto resample = [&](std::size_t li) {
        HardConcreteSample s = hard_concrete_sample(layers[li]->scores, pruner->hard_concrete, noise[li]);
        layers[li]->score_gate = hard_concrete_gate_factor(s, pruner->hard_concrete);
        layers[li]->mask = std::move(s.mask);
    };
    if (l0) {
        std::mt19937_64 rng(noise_seed);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            noise.push_back(uniform_noise(layers[li]->scores.rows(), layers[li]->scores.cols(), rng));
            resample(li);
        }
    }

    const ForwardOptions fwd{Mode::train, pruner};
    auto build_loss = [&](ad::Graph& g) {
        ad::Var loss = ad::softmax_cross_entropy(g, model->forward(g, x, fwd), labels);
        if (pruner) loss = ad::add(g, loss, regularization_term(g, layers, *pruner, reg_step));
        return loss;
    };
    auto loss_value = [&]() {
        ad::Graph g;
        return g.value(build_loss(g))(0, 0);
    };

    ad::Graph g;
    const ad::GradientStore grads = g.backward(build_loss(g));

    NetworkGradientReport report;
    for (const auto& [name, analytic] : grads) {
        const bool is_score = ends_with(name, ".S");
        if (is_score && !l0) continue;
        Tensor2D* target = nullptr;
        std::size_t layer_index = layers.size();
        for (std::size_t li = 0; li < layers.size(); ++li) {
            if (layers[li]->weight_param() == name) target = &layers[li]->weights;
            if (layers[li]->score_param() == name) {
                target = &layers[li]->scores;
                layer_index = li;
            }
        }
        if (target == nullptr) target = &model->dense(name).value;

        const Tensor2D original = *target;
        auto f = [&](const Tensor2D& p) {
            *target = p;
            if (is_score) resample(layer_index);
            return loss_value();
        };
        const double err = finite_difference_check(f, original, analytic, h);
        *target = original;
        if (is_score) resample(layer_index);

        report.entries_checked += original.size();
        if (err >= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_parameter = name;
        }
    }
    return report;
}

double score_gradient_contract_deviation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> small(-8, 8);
    std::bernoulli_distribution coin(0.5);
    auto dyadic = [&](std::size_t r, std::size_t c) {
        Tensor2D t(r, c);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = small(rng) / 8.0;
        return t;
    };
    const std::size_t out = 3, in = 4, batch = 2;
    const Tensor2D w = dyadic(out, in);
    const Tensor2D s = dyadic(out, in);
    const Tensor2D x = dyadic(in, batch);
    const Tensor2D upstream = dyadic(out, batch);
    Mask m(out, in);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = coin(rng) ? 1.0 : 0.0;

    ad::Graph g;
    ad::Var a = masked_linear(g, g.parameter("W", w), g.parameter("S", s), m, g.constant(x));
    ad::Var loss = ad::sum(g, ad::hadamard(g, a, g.constant(upstream)));
    const ad::GradientStore grads = g.backward(loss);
    const Tensor2D& gs = grads.at("S");

    double worst = 0.0;
    for (std::size_t i = 0; i < out; ++i) {
        for (std::size_t j = 0; j < in; ++j) {
            double expected = 0.0;
            for (std::size_t b = 0; b < batch; ++b) expected += upstream(i, b) * w(i, j) * x(j, b);
            worst = std::max(worst, std::abs(gs(i, j) - expected));
        }
    }
    return worst;
}

// --- Top_v ------------------------------------------------------------------

namespace {

std::size_t brute_keep_count(double v, std::size_t n) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("keep fraction must lie in [0,1]");
    return std::min(n, static_cast<std::size_t>(std::round(v * static_cast<double>(n))));
}

}  // namespace

Mask brute_force_topv(const Tensor2D& scores, double keep_fraction) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    Mask m(scores.rows(), scores.cols(), 0.0);
    const std::size_t k = brute_keep_count(keep_fraction, scores.size());
    for (std::size_t i = 0; i < k; ++i) m[order[i]] = 1.0;
    return m;
}

std::vector<Mask> brute_force_topv_global(std::span<const Tensor2D> scores, double keep_fraction) {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    for (std::size_t m = 0; m < scores.size(); ++m) {
        for (std::size_t f = 0; f < scores[m].size(); ++f) order.emplace_back(m, f);
    }
    std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
        return scores[a.first][a.second] > scores[b.first][b.second];
    });
    std::vector<Mask> masks;
    for (const auto& s : scores) masks.emplace_back(s.rows(), s.cols(), 0.0);
    const std::size_t k = brute_keep_count(keep_fraction, order.size());
    for (std::size_t i = 0; i < k; ++i) masks[order[i].first][order[i].second] = 1.0;
    return masks;
}

// --- hard-concrete Monte Carlo ------------------------------------------------

MonteCarloEstimate monte_carlo_l0(const Tensor2D& scores, const HardConcreteParams& params, std::size_t samples,
                                  std::uint64_t seed) {
    params.validate();
    if (samples < 10000) throw ConfigError("monte_carlo_l0 needs at least 10^4 samples");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t n = 1; n <= samples; ++n) {
        double count = 0.0;
        for (double s : scores.values()) {
            double u = uniform(rng);
            while (u <= 0.0) u = uniform(rng);
            const double s_bar = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log1p(-u) + s) / params.b));
            if ((params.r - params.l) * s_bar + params.l > 0.0) count += 1.0;
        }
        const double delta = count - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (count - mean);
    }
    const double variance = samples > 1 ? m2 / static_cast<double>(samples - 1) : 0.0;
    return {mean, std::sqrt(variance / static_cast<double>(samples))};
}

// --- swap harness -------------------------------------------------------------

void SwapHarnessConfig::validate() const {
    if (inputs < 2) throw ConfigError("swap harness needs at least two inputs");
    if (rule == SwapRule::topk && (k == 0 || k >= inputs)) {
        throw ConfigError("swap harness needs 0 < k < inputs");
    }
    if (rule == SwapRule::negative_threshold && !(tau < 0.0)) {
        throw ConfigError("negative threshold masking needs tau < 0");
    }
    if (!(lr_weights >= 0.0 && lr_weights <= 1e-4)) {
        throw ConfigError("swap harness needs 0 <= lr_weights <= 1e-4 (small weight steps)");
    }
    if (!(lr_scores > 0.0)) throw ConfigError("swap harness needs lr_scores > 0");
    if (steps <= 0) throw ConfigError("swap harness needs steps > 0");
}

SwapInstance random_swap_instance(const SwapHarnessConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    const std::size_t n = config.inputs;
    SwapInstance inst{Tensor2D(1, n), Tensor2D(1, n), Tensor2D(n, 1), 5.0};
    const double center = config.rule == SwapRule::topk ? 0.0 : config.tau;
    for (std::size_t j = 0; j < n; ++j) {
        inst.weights[j] = unit(rng);
        inst.x[j] = unit(rng);
        inst.scores[j] = center + jitter(rng);
    }
    inst.target = unit(rng) < 0.0 ? -5.0 : 5.0;
    return inst;
}

namespace {

std::vector<char> select(const SwapHarnessConfig& config, const Tensor2D& s) {
    std::vector<char> sel(s.size(), 0);
    switch (config.rule) {
        case SwapRule::topk: {
            std::vector<std::size_t> order(s.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
            for (std::size_t i = 0; i < config.k; ++i) sel[order[i]] = 1;
            break;
        }
        case SwapRule::threshold:
            for (std::size_t j = 0; j < s.size(); ++j) sel[j] = s[j] >= config.tau ? 1 : 0;
            break;
        case SwapRule::negative_threshold:
            for (std::size_t j = 0; j < s.size(); ++j) sel[j] = s[j] < config.tau ? 1 : 0;
            break;
    }
    return sel;
}

double unit_loss(const SwapInstance& inst, const Tensor2D& w, const std::vector<char>& sel) {
    double a = 0.0;
    for (std::size_t j = 0; j < sel.size(); ++j) {
        if (sel[j]) a += w[j] * inst.x[j];
    }
    const double d = a - inst.target;
    return 0.5 * d * d;
}

}  // namespace

SwapHarnessResult swap_loss_harness(const SwapHarnessConfig& config, SwapInstance inst) {
    config.validate();
    const std::size_t n = config.inputs;
    if (inst.weights.rows() != 1 || inst.weights.cols() != n || !inst.scores.same_shape(inst.weights) ||
        inst.x.rows() != n || inst.x.cols() != 1) {
        throw DimensionError("swap instance shapes do not match " + std::to_string(n) + " inputs");
    }

    SwapHarnessResult result;
    std::vector<char> sel = select(config, inst.scores);
    for (std::int64_t t = 0; t < config.steps; ++t) {
        Mask m(1, n);
        for (std::size_t j = 0; j < n; ++j) m[j] = sel[j] ? 1.0 : 0.0;

        ad::Graph g;
        ad::Var a = masked_linear(g, g.parameter("W", inst.weights), g.parameter("S", inst.scores), m,
                                  g.constant(inst.x));
        ad::Var d = ad::add_scalar(g, a, -inst.target);
        ad::Var loss = ad::scale(g, ad::hadamard(g, d, d), 0.5);
        const ad::GradientStore grads = g.backward(loss);

        Tensor2D w_next = inst.weights;
        const Tensor2D& gw = grads.at("W");
        const Tensor2D& gs = grads.at("S");
        for (std::size_t j = 0; j < n; ++j) {
            w_next[j] -= config.lr_weights * gw[j];
            inst.scores[j] -= config.lr_scores * gs[j];
        }
        std::vector<char> next = select(config, inst.scores);

        SwapEvent ev;
        ev.step = t;
        for (std::size_t j = 0; j < n; ++j) {
            if (sel[j] && !next[j]) ev.outgoing.push_back(j);
            if (!sel[j] && next[j]) ev.incoming.push_back(j);
        }
        if (!ev.outgoing.empty() || !ev.incoming.empty()) {
            if (ev.outgoing.size() == ev.incoming.size()) {
                ev.loss_before = unit_loss(inst, inst.weights, sel);
                ev.loss_after = unit_loss(inst, w_next, next);
                result.events.push_back(std::move(ev));
            } else {
                ++result.unbalanced_changes;
            }
        }
        inst.weights = std::move(w_next);
        sel = std::move(next);
    }

    if (result.events.empty()) {
        result.status = Status::inconclusive;
    } else {
        const bool all_down = std::all_of(result.events.begin(), result.events.end(),
                                          [](const SwapEvent& e) { return e.loss_decreased(); });
        result.status = all_down ? Status::pass : Status::fail;
    }
    return result;
}

// --- trace oracles ------------------------------------------------------------

AccumulatorReplay::AccumulatorReplay(const OptimizerSettings& score_optimizer) : settings_(score_optimizer) {
    if (!settings_.is_plain_sgd()) {
        throw ContractError("accumulator replay needs plain SGD on the scores (no momentum, no adaptive optimizer)");
    }
}

void AccumulatorReplay::observe(const StepObservation& obs) {
    if (!obs.score_optimizer.is_plain_sgd() || obs.score_optimizer.lr != settings_.lr) {
        throw ContractError("accumulator replay: trace was recorded with a different score optimizer");
    }
    if (replay_.empty()) {
        replay_.assign(obs.scores_before.begin(), obs.scores_before.end());
        for (const auto& s : obs.scores_before) always_unmasked_.push_back(Tensor2D::ones(s.rows(), s.cols()));
    }
    for (std::size_t li = 0; li < obs.layers.size(); ++li) {
        const Tensor2D* gw = obs.grads->find(obs.layers[li]->weight_param());
        const Tensor2D& w = obs.weights_before[li];
        const Tensor2D& m = obs.masks_used[li];
        Tensor2D& r = replay_[li];
        for (std::size_t e = 0; e < r.size(); ++e) {
            if (m[e] != 1.0) always_unmasked_[li][e] = 0.0;
            const double movement = gw ? (*gw)[e] * w[e] : 0.0;
            r[e] += -settings_.lr * movement;
        }
    }
    ++steps_;
}

StepObserver AccumulatorReplay::observer() {
    return [this](const StepObservation& obs) { observe(obs); };
}

double AccumulatorReplay::max_deviation(std::span<const MaskedLayer* const> layers) const {
    if (layers.size() != replay_.size()) throw ContractError("accumulator replay: layer count mismatch");
    double worst = 0.0;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t e = 0; e < replay_[li].size(); ++e) {
            if (always_unmasked_[li][e] == 1.0) {
                worst = std::max(worst, std::abs(layers[li]->scores[e] - replay_[li][e]));
            }
        }
    }
    return worst;
}

std::size_t AccumulatorReplay::tracked_entries() const {
    std::size_t n = 0;
    for (const auto& m : always_unmasked_) {
        for (double v : m.values()) n += v == 1.0 ? 1 : 0;
    }
    return n;
}

namespace {

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

void SignPropertyChecker::observe(const StepObservation& obs) {
    for (std::size_t li = 0; li < obs.layers.size(); ++li) {
        const MaskedLayer& layer = *obs.layers[li];
        const Tensor2D& w0 = obs.weights_before[li];
        const Tensor2D& s0 = obs.scores_before[li];
        const Tensor2D& m = obs.masks_used[li];
        for (std::size_t e = 0; e < w0.size(); ++e) {
            if (m[e] == 0.0) continue;
            const double ds = layer.scores[e] - s0[e];
            const double dw = layer.weights[e] - w0[e];
            if (ds == 0.0 || dw == 0.0) continue;
            ++checked_;
            if (sign_of(ds) != sign_of(w0[e] * dw)) ++violations_;
        }
    }
}

StepObserver SignPropertyChecker::observer() {
    return [this](const StepObservation& obs) { observe(obs); };
}

void MaskedWeightWatcher::observe(const StepObservation& obs) {
    for (std::size_t li = 0; li < obs.layers.size(); ++li) {
        const Tensor2D& w0 = obs.weights_before[li];
        const Tensor2D& m = obs.masks_used[li];
        for (std::size_t e = 0; e < w0.size(); ++e) {
            if (m[e] != 0.0) continue;
            ++masked_seen_;
            if (obs.layers[li]->weights[e] != w0[e]) ++changed_;
        }
    }
}

StepObserver combine(std::vector<StepObserver> observers) {
    return [obs = std::move(observers)](const StepObservation& o) {
        for (const auto& f : obs) {
            if (f) f(o);
        }
    };
}

}  // namespace prunelab::oracles
