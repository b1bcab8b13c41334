#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/model.hpp"
#include "prunelab/oracles.hpp"
#include "prunelab/pruners.hpp"
#include "prunelab/tasks.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

enum class DistillAxis { off, on, both };

struct SweepConfig {
    std::vector<PrunerVariant> pruners{PrunerVariant::magnitude, PrunerVariant::movement,
                                       PrunerVariant::soft_movement, PrunerVariant::l0};
    std::vector<double> kept{0.03, 0.10, 0.70};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    DistillAxis distill = DistillAxis::off;
    // Bisection on log(lambda) so soft movement and l0 cells land on the
    // requested kept fraction; runs once per (pruner, kept) on the first seed.
    bool calibrate = true;
    int calibration_probes = 8;
    double mvp_lambda_lo = 1e-6, mvp_lambda_hi = 1e-1;
    double l0_lambda_lo = 1e-4, l0_lambda_hi = 1.0;
};

// Everything a command needs; parsed from a flat key=value file.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";

    TaskSpec task;  // sample_noise 3.5
    std::filesystem::path task_dir;  // empty: <out>/tasks

    ModelSpec model;

    std::int64_t pretrain_steps = 2000;
    double pretrain_lr = 0.01;
    std::filesystem::path resume;      // start pretraining from this checkpoint
    std::filesystem::path pretrained;  // empty: <out>/pretrain/model.ckpt

    PrunerConfig pruner;  // lambda_mvp 1e-3, lambda_l0 0.02
    double l0_score_init = 3.0;
    double l0_score_lr = 10.0;
    double sparsity_initial = 0.0;
    double sparsity_final = 0.9;       // pruned fraction at the end
    std::int64_t warmup_steps = -1;    // -1: 5% of steps
    std::int64_t cooldown_steps = -1;  // -1: 20% of steps

    OptimizerConfig optimizer;  // fine-pruning run
    DistillationConfig distill;
    std::int64_t teacher_steps = 1000;

    SweepConfig sweep;

    ExperimentConfig();

    // Task and model specs with the run seed and task shape filled in.
    TaskSpec task_spec(std::uint64_t run_seed) const;
    ModelSpec model_spec() const;
    std::filesystem::path resolved_task_dir() const;
    std::filesystem::path resolved_pretrained() const;
    std::filesystem::path resolved_teacher() const;
    // Pruner settings for `variant` (score init and learning rate per variant).
    PrunerConfig pruner_for(PrunerVariant variant) const;
    // Schedule over optimizer.steps ending at `final_pruned`; warm-up and
    // cool-down of -1 resolve to 5% and 20% of the steps.
    SparsitySchedule schedule_for(double final_pruned) const;
    OptimizerConfig pretrain_optimizer() const;
    void validate() const;
};

struct ConfigKeyDoc {
    std::string key;
    std::string default_value;
    std::string description;
};

// Every accepted key with its default, in documentation order.
const std::vector<ConfigKeyDoc>& config_keys();

// `#` starts a comment; blank lines are ignored. Unknown keys, repeated keys
// and malformed values raise ConfigError naming the line.
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key as key=value, one per line; parsing the dump gives back the same config.
std::string dump_config(const ExperimentConfig& config);

// --- reports -------------------------------------------------------------------

struct ScatterRow {
    std::string layer;
    std::size_t i = 0;
    std::size_t j = 0;
    double w_pretrained = 0.0;
    double w_final = 0.0;
    double score_final = 0.0;
    bool pruned = false;
};

std::vector<ScatterRow> scatter_rows(const Model& pretrained, const Model& final_model, const PrunerConfig& pruner);

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::string>& layers,
                       const std::filesystem::path& path);
void write_scatter_csv(const std::vector<ScatterRow>& rows, const std::filesystem::path& path);
std::vector<ScatterRow> read_scatter_csv(const std::filesystem::path& path);
void write_layer_sparsity_csv(const std::vector<LayerSparsity>& rows, const std::filesystem::path& path);

// Ordering violations of a scatter file: for magnitude, a pruned |w_final|
// above a kept one; otherwise a pruned score above a kept one. Scope is the
// layer for local selection and the whole file for global selection.
std::size_t scatter_ordering_violations(const std::vector<ScatterRow>& rows, PrunerVariant variant,
                                        Locality locality);

// Scores against weights among kept entries: the smallest |w_final| in the
// top decile of scores, and how many of those entries crossed zero.
struct VShapeReport {
    std::size_t top_decile = 0;
    double min_abs_weight = 0.0;
    std::size_t zero_crossings = 0;
};
VShapeReport v_shape_report(const std::vector<ScatterRow>& rows);

// --- sweep ---------------------------------------------------------------------

struct SweepCell {
    PrunerVariant pruner = PrunerVariant::movement;
    bool distill = false;
    double kept_target = 0.0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double kept_achieved = 0.0;
    double lambda = 0.0;
    bool ok = true;
    std::string error;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // in axis order
};

SweepResult run_sweep(const ExperimentConfig& config, unsigned jobs);
// Data rows then mean and std rows per (pruner, distill, kept).
void write_summary_csv(const SweepResult& result, const std::filesystem::path& path);

// --- commands --------------------------------------------------------------------

void cmd_gen_tasks(const ExperimentConfig& config);
void cmd_pretrain(const ExperimentConfig& config);
void cmd_fineprune(const ExperimentConfig& config);
void cmd_sweep(const ExperimentConfig& config, unsigned jobs);
// Runs the oracle suite, writes <out>/verify_report.csv; false on any FAIL.
bool cmd_verify(const ExperimentConfig& config);

}  // namespace prunelab
