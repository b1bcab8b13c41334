#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/masking.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruners.hpp"
#include "prunelab/tensor.hpp"
#include "prunelab/training.hpp"

namespace prunelab::oracles {

enum class Status { pass, fail, inconclusive };
std::string_view to_string(Status s);

// ---------------------------------------------------------------------------
// Finite differences

using ScalarFn = std::function<double(const Tensor2D&)>;

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps
// near-zero gradients from turning rounding noise into large ratios.
inline constexpr double kRelativeErrorFloor = 1e-3;
double relative_error(double analytic, double numeric);

// Central differences of `f` at `point` against `analytic`, entry by entry.
// Returns the worst relative error. Throws DomainError on non-finite f.
double finite_difference_check(const ScalarFn& f, const Tensor2D& point, const Tensor2D& analytic,
                               double h = 1e-6);

struct NetworkGradientReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t entries_checked = 0;
};

// Gradient of CE + regularizer for every parameter a train-mode forward binds,
// against central differences. Masks are frozen at their current value;
// for l0, hard-concrete noise is drawn once from `noise_seed` and the mask is
// recomputed from the perturbed scores with that same noise, so the score
// path is checked through the relaxation. Score paths of the other variants
// are straight-through (not the true derivative) and are skipped.
NetworkGradientReport network_gradient_check(const Model& model, const Tensor2D& x, std::span<const int> labels,
                                             const PrunerConfig* pruner, std::uint64_t noise_seed,
                                             double h = 1e-6);

// Masked linear score gradient on a dyadic instance where every product is
// exact: returns max |dL/dS_ij - g_i W_ij x_j| for L = sum_i g_i a_i, which
// must be exactly 0, masked entries included.
double score_gradient_contract_deviation(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Top_v

// Full stable sort by descending score; ties keep the smaller flat index.
Mask brute_force_topv(const Tensor2D& scores, double keep_fraction);
// Same over a collection, ties broken by (matrix index, flat index).
std::vector<Mask> brute_force_topv_global(std::span<const Tensor2D> scores, double keep_fraction);

// ---------------------------------------------------------------------------
// Hard-concrete Monte Carlo

struct MonteCarloEstimate {
    double estimate = 0.0;
    double standard_error = 0.0;
};

// Mean over `samples` hard-concrete draws of the number of entries with
// M > 0. Throws ConfigError for fewer than 10^4 samples.
MonteCarloEstimate monte_carlo_l0(const Tensor2D& scores, const HardConcreteParams& params, std::size_t samples,
                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Swap harness: one output unit a = sum_j M_j W_j x_j, loss (a - y)^2 / 2,
// plain SGD on W (masked path) and S (straight-through).

enum class SwapRule {
    topk,                // the k largest scores
    threshold,           // S >= tau
    negative_threshold,  // S < tau with tau < 0: the absolute-score failure case
};

struct SwapHarnessConfig {
    SwapRule rule = SwapRule::topk;
    std::size_t inputs = 2;
    std::size_t k = 1;
    double tau = 0.0;
    double lr_weights = 1e-4;
    double lr_scores = 1e-2;
    std::int64_t steps = 200;

    void validate() const;
};

struct SwapInstance {
    Tensor2D weights;  // 1 x n
    Tensor2D scores;   // 1 x n
    Tensor2D x;        // n x 1, entries in [-1, 1]
    double target = 5.0;
};

// Weights and inputs uniform in [-1, 1], scores within 0.05 of the selection
// boundary, target +-5 so the first-order term dominates.
SwapInstance random_swap_instance(const SwapHarnessConfig& config, std::uint64_t seed);

struct SwapEvent {
    std::int64_t step = 0;
    std::vector<std::size_t> outgoing;  // selected at t, dropped at t+1
    std::vector<std::size_t> incoming;  // the reverse
    double loss_before = 0.0;
    double loss_after = 0.0;

    bool loss_decreased() const { return loss_after < loss_before; }
};

struct SwapHarnessResult {
    std::vector<SwapEvent> events;
    // Steps where the selection changed without an equal out/in exchange.
    std::size_t unbalanced_changes = 0;
    // pass: every swap decreased the loss; inconclusive: no swap happened.
    Status status = Status::inconclusive;
};

// Runs `config.steps` steps. A swap is a step whose selection loses exactly N
// connections and gains exactly N; its losses are evaluated on the same input
// before and after the step.
SwapHarnessResult swap_loss_harness(const SwapHarnessConfig& config, SwapInstance instance);

// ---------------------------------------------------------------------------
// Training-trace oracles, fed through a StepObserver.

// Replays S_T = S_0 - a_S sum_t (dL/dW)^(t) W^(t) over entries that stayed
// unmasked at every step (the recorded weight gradient is the masked one).
class AccumulatorReplay {
public:
    // Throws ContractError unless `score_optimizer` is plain SGD.
    explicit AccumulatorReplay(const OptimizerSettings& score_optimizer);

    void observe(const StepObservation& obs);
    StepObserver observer();

    // Max |S_live - S_replayed| over tracked entries.
    double max_deviation(std::span<const MaskedLayer* const> layers) const;
    std::size_t tracked_entries() const;
    std::int64_t steps() const { return steps_; }

private:
    OptimizerSettings settings_;
    std::vector<Tensor2D> replay_;
    std::vector<Tensor2D> always_unmasked_;
    std::int64_t steps_ = 0;
};

// sign(dS) == sign(W dW) on unmasked entries where both updates are nonzero,
// W taken before the step.
class SignPropertyChecker {
public:
    void observe(const StepObservation& obs);
    StepObserver observer();

    std::size_t checked() const { return checked_; }
    std::size_t violations() const { return violations_; }

private:
    std::size_t checked_ = 0;
    std::size_t violations_ = 0;
};

// Counts masked weights whose value changed during a step (must stay 0 under
// plain SGD).
class MaskedWeightWatcher {
public:
    void observe(const StepObservation& obs);
    std::size_t changed() const { return changed_; }
    std::size_t masked_seen() const { return masked_seen_; }

private:
    std::size_t changed_ = 0;
    std::size_t masked_seen_ = 0;
};

// Fans one observation out to several observers.
StepObserver combine(std::vector<StepObserver> observers);

// ---------------------------------------------------------------------------
// Full suite

struct ReportRow {
    std::string oracle;
    Status status = Status::pass;
    double metric = 0.0;
    double threshold = 0.0;
};

struct SuiteOptions {
    std::uint64_t seed = 0;
    // Multiplier on the straight-through score gradient of the training runs.
    // -1 corrupts it; used to show the trace oracles catch the fault.
    double score_grad_sign = 1.0;
};

std::vector<ReportRow> run_suite(const SuiteOptions& options = {});

bool all_passed(std::span<const ReportRow> rows);

// Header oracle,status,metric,threshold.
void write_report_csv(std::span<const ReportRow> rows, const std::filesystem::path& path);

}  // namespace prunelab::oracles
