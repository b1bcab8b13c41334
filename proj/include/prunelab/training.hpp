#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunelab/autodiff.hpp"
#include "prunelab/model.hpp"
#include "prunelab/optimizer.hpp"
#include "prunelab/pruners.hpp"
#include "prunelab/schedule.hpp"
#include "prunelab/tasks.hpp"

namespace prunelab {

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr_weights = 0.01;
    double lr_scores = 0.01;
    double momentum = 0.0;
    std::size_t batch_size = 32;
    std::int64_t steps = 1000;
    std::uint64_t seed = 0;
    // Metrics cadence: a row every `log_every` steps plus the final step.
    std::int64_t log_every = 10;

    OptimizerSettings weight_settings() const { return {kind, lr_weights, momentum}; }
    OptimizerSettings score_settings() const { return {kind, lr_scores, momentum}; }
    void validate() const;
};

struct DistillationConfig {
    bool enabled = false;
    double lambda_kd = 0.5;   // weight of the distillation term in the convex combination
    double temperature = 2.0;
    std::string teacher_path;

    void validate() const;
};

struct MetricsRow {
    std::int64_t step = 0;
    double kept_fraction = 1.0;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
    double regularizer_value = 0.0;
    std::vector<std::size_t> layer_kept;
};

struct TrainState {
    std::int64_t step = 0;
    double sparsity = 0.0;
    double running_loss = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// What one optimization step did, handed to an observer after the step.
struct StepObservation {
    std::int64_t step = 0;
    std::span<MaskedLayer* const> layers;          // state after the step
    std::span<const Tensor2D> weights_before;      // per layer
    std::span<const Tensor2D> scores_before;       // per layer
    std::span<const Tensor2D> masks_used;          // masks of this step's forward pass
    const ad::GradientStore* grads = nullptr;
    OptimizerSettings weight_optimizer;
    OptimizerSettings score_optimizer;
    double loss = 0.0;
};

using StepObserver = std::function<void(const StepObservation&)>;

struct TrainResult {
    std::vector<MetricsRow> metrics;
    TrainState state;
};

// Dense training (all masks one, no scores) of a freshly initialized model.
TrainResult pretrain(Model& model, const Dataset& train, const Dataset& eval, const OptimizerConfig& opt,
                     const StepObserver& observer = {});

struct FinePruneRequest {
    PrunerConfig pruner;
    SparsitySchedule schedule;
    OptimizerConfig optimizer;
    DistillationConfig distill;
    const Model* teacher = nullptr;  // required when distill.enabled
};

// Joint fine-tuning and pruning on the target task. Per step: forward with
// the current masks, loss = (1 - l_kd) CE + l_kd KD + R(S), backward, weight
// update, then score update and mask refresh at the next step's sparsity.
TrainResult fineprune(Model& model, const Dataset& train, const Dataset& eval, const FinePruneRequest& request,
                      const StepObserver& observer = {});

// Accuracy and mean cross-entropy in eval mode.
EvalResult evaluate(Model& model, const Dataset& data, const PrunerConfig* pruner = nullptr);

// Kept fraction over all prunable weights, using eval-mode masks.
double kept_fraction(const Model& model, const PrunerConfig* pruner = nullptr);

}  // namespace prunelab
