#include "prunelab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "prunelab/errors.hpp"

namespace prunelab {

void OptimizerConfig::validate() const {
    weight_settings().validate();
    score_settings().validate();
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (steps < 0) throw ConfigError("steps must be nonnegative");
    if (log_every <= 0) throw ConfigError("log_every must be positive");
}

void DistillationConfig::validate() const {
    if (!(lambda_kd >= 0.0 && lambda_kd <= 1.0)) {
        throw ConfigError("lambda_kd must lie in [0,1], got " + std::to_string(lambda_kd));
    }
    if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
}

namespace {

// Epoch-shuffled minibatch indices.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        pos_ = n;
    }

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t pos_;
};

std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(ds.labels[i]);
    return y;
}

void check_finite_params(Model& model, std::int64_t step) {
    for (const auto* layer : model.prunable_layers()) {
        if (!layer->weights.all_finite() || !layer->scores.all_finite()) {
            throw DivergenceError("parameters of " + layer->name + " became non-finite at step " +
                                  std::to_string(step));
        }
    }
    for (const auto& p : model.dense_params()) {
        if (!p.value.all_finite()) {
            throw DivergenceError("parameter " + p.name + " became non-finite at step " + std::to_string(step));
        }
    }
}

struct LoopSpec {
    const PrunerConfig* pruner = nullptr;  // null: dense training
    const SparsitySchedule* schedule = nullptr;
    const DistillationConfig* distill = nullptr;
    const Model* teacher = nullptr;
};

TrainResult run_loop(Model& model, const Dataset& train, const Dataset& eval, const OptimizerConfig& opt,
                     const LoopSpec& spec, const StepObserver& observer) {
    opt.validate();
    if (train.size() == 0) throw ConfigError("training set is empty");
    if (train.dim() != model.spec().input_dim) {
        throw DimensionError("training data has " + std::to_string(train.dim()) + " features, model expects " +
                             std::to_string(model.spec().input_dim));
    }
    const PrunerConfig* pruner = spec.pruner;
    const bool distill = spec.distill && spec.distill->enabled;
    if (distill && spec.teacher == nullptr) throw ConfigError("distillation enabled without a teacher model");

    auto layers = model.prunable_layers();
    std::optional<PrunerState> pstate;
    auto keep_at = [&](std::int64_t t) -> std::optional<double> {
        if (!pruner || !pruner->uses_topv()) return std::nullopt;
        return 1.0 - sparsity_at(*spec.schedule, t);
    };
    if (pruner) {
        pstate.emplace(*pruner, opt.seed ^ 0x9e3779b97f4a7c15ULL);
        for (auto* layer : layers) init_scores(*layer, *pruner);
        refresh_masks(layers, *pruner, keep_at(0), Mode::train, &pstate->rng());
    } else {
        for (auto* layer : layers) {
            layer->mask = Tensor2D::ones(layer->weights.rows(), layer->weights.cols());
            layer->score_gate = Tensor2D{};
        }
    }

    Optimizer weight_opt(opt.weight_settings());
    BatchSampler sampler(train.size(), opt.seed);
    TrainResult result;
    ForwardOptions train_fwd{Mode::train, pruner};
    ad::Graph g;
    ad::Graph teacher_graph;
    std::unique_ptr<Model> teacher = distill ? spec.teacher->clone() : nullptr;

    std::vector<Tensor2D> w_before, s_before, m_before;
    double loss_since_log = 0.0;
    std::int64_t steps_since_log = 0;

    for (std::int64_t t = 0; t < opt.steps; ++t) {
        const auto idx = sampler.next(opt.batch_size);
        const Tensor2D x = train.columns(idx);
        const std::vector<int> y = gather_labels(train, idx);

        g.reset();
        ad::Var logits = model.forward(g, x, train_fwd);
        ad::Var total = ad::softmax_cross_entropy(g, logits, y);
        if (distill) {
            teacher_graph.reset();
            ad::Var tl = teacher->forward(teacher_graph, x, ForwardOptions{Mode::eval, nullptr});
            ad::Var kd = ad::kd_divergence(g, teacher_graph.value(tl), logits, spec.distill->temperature);
            const double lam = spec.distill->lambda_kd;
            total = ad::add(g, ad::scale(g, total, 1.0 - lam), ad::scale(g, kd, lam));
        }
        double reg_value = 0.0;
        if (pruner) {
            ad::Var reg = regularization_term(g, layers, *pruner, t);
            reg_value = g.value(reg)(0, 0);
            total = ad::add(g, total, reg);
        }
        const double loss = g.value(total)(0, 0);
        if (!std::isfinite(loss)) {
            throw DivergenceError("training loss became non-finite at step " + std::to_string(t) +
                                  " (lr_weights=" + std::to_string(opt.lr_weights) + ")");
        }
        const ad::GradientStore grads = g.backward(total);

        if (observer) {
            w_before.clear();
            s_before.clear();
            m_before.clear();
            for (const auto* layer : layers) {
                w_before.push_back(layer->weights);
                s_before.push_back(layer->scores);
                m_before.push_back(layer->mask);
            }
        }

        for (auto* layer : layers) {
            if (const Tensor2D* gw = grads.find(layer->weight_param())) {
                weight_opt.update(layer->weight_param(), layer->weights, *gw);
            }
        }
        for (auto& p : model.dense_params()) {
            if (!p.trainable) continue;
            if (const Tensor2D* gp = grads.find(p.name)) weight_opt.update(p.name, p.value, *gp);
        }
        if (pstate) pstate->step(layers, grads, keep_at(t + 1));
        check_finite_params(model, t);

        if (observer) {
            StepObservation obs;
            obs.step = t;
            obs.layers = layers;
            obs.weights_before = w_before;
            obs.scores_before = s_before;
            obs.masks_used = m_before;
            obs.grads = &grads;
            obs.weight_optimizer = opt.weight_settings();
            obs.score_optimizer = pruner ? pruner->score_optimizer : opt.score_settings();
            obs.loss = loss;
            observer(obs);
        }

        loss_since_log += loss;
        ++steps_since_log;
        const std::int64_t done = t + 1;
        result.state.step = done;
        result.state.sparsity = pruner && pruner->uses_topv() ? sparsity_at(*spec.schedule, done) : 0.0;
        result.state.running_loss = loss;
        if (done % opt.log_every == 0 || done == opt.steps) {
            MetricsRow row;
            row.step = done;
            row.train_loss = loss_since_log / static_cast<double>(steps_since_log);
            row.regularizer_value = reg_value;
            row.kept_fraction = kept_fraction(model, pruner);
            row.eval_accuracy = eval.size() > 0 ? evaluate(model, eval, pruner).accuracy : 0.0;
            for (const auto& ls : remaining_weights_report(model, pruner)) row.layer_kept.push_back(ls.kept);
            spdlog::debug("step {} loss {:.5f} kept {:.4f} acc {:.4f}", done, row.train_loss, row.kept_fraction,
                          row.eval_accuracy);
            result.metrics.push_back(std::move(row));
            loss_since_log = 0.0;
            steps_since_log = 0;
        }
    }
    return result;
}

}  // namespace

TrainResult pretrain(Model& model, const Dataset& train, const Dataset& eval, const OptimizerConfig& opt,
                     const StepObserver& observer) {
    return run_loop(model, train, eval, opt, LoopSpec{}, observer);
}

TrainResult fineprune(Model& model, const Dataset& train, const Dataset& eval, const FinePruneRequest& request,
                      const StepObserver& observer) {
    request.pruner.validate();
    request.schedule.validate();
    request.distill.validate();
    if (!request.pruner.uses_topv() && (request.schedule.final != 0.0 || request.schedule.initial != 0.0)) {
        spdlog::warn("{} pruning ignores the sparsity schedule; sparsity is driven by lambda",
                     to_string(request.pruner.variant));
    }
    if (request.pruner.uses_topv() && request.schedule.total != request.optimizer.steps) {
        throw ConfigError("schedule total (" + std::to_string(request.schedule.total) +
                          ") must equal the number of training steps (" +
                          std::to_string(request.optimizer.steps) + ")");
    }
    LoopSpec spec{&request.pruner, &request.schedule, &request.distill, request.teacher};
    return run_loop(model, train, eval, request.optimizer, spec, observer);
}

EvalResult evaluate(Model& model, const Dataset& data, const PrunerConfig* pruner) {
    if (data.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    ad::Graph g;
    for (std::size_t first = 0; first < data.size(); first += kChunk) {
        const std::size_t n = std::min(kChunk, data.size() - first);
        g.reset();
        ad::Var logits = model.forward(g, data.columns(first, n), ForwardOptions{Mode::eval, pruner});
        std::span<const int> y(data.labels.data() + first, n);
        loss_sum += g.value(ad::softmax_cross_entropy(g, logits, y))(0, 0) * static_cast<double>(n);
        const Tensor2D& L = g.value(logits);
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < L.rows(); ++c) {
                if (L(c, j) > L(best, j)) best = c;
            }
            correct += static_cast<int>(best) == y[j] ? 1 : 0;
        }
    }
    const double n = static_cast<double>(data.size());
    return {static_cast<double>(correct) / n, loss_sum / n};
}

double kept_fraction(const Model& model, const PrunerConfig* pruner) {
    std::size_t kept = 0;
    std::size_t total = 0;
    for (const auto& ls : remaining_weights_report(model, pruner)) {
        kept += ls.kept;
        total += ls.total;
    }
    return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

}  // namespace prunelab
