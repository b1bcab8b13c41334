#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/autodiff.hpp"
#include "prunelab/masking.hpp"
#include "prunelab/optimizer.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class PrunerVariant { magnitude, movement, soft_movement, l0 };
enum class Locality { local, global };
enum class Mode { train, eval };

std::string_view to_string(PrunerVariant v);
PrunerVariant parse_pruner_variant(std::string_view text);
std::string_view to_string(Locality l);
Locality parse_locality(std::string_view text);

struct PrunerConfig {
    PrunerVariant variant = PrunerVariant::movement;
    Locality locality = Locality::local;
    double tau = 0.0;         // soft movement threshold
    double lambda_mvp = 0.0;  // soft movement regularizer weight
    double lambda_l0 = 0.0;   // expected-L0 penalty weight
    HardConcreteParams hard_concrete{};
    // Initial score value. Unset selects the variant default (see default_score_init).
    std::optional<double> score_init;
    OptimizerSettings score_optimizer{OptimizerKind::sgd, 1e-2, 0.0};
    // Linear ramp of lambda over this many steps; 0 keeps lambda constant.
    std::int64_t lambda_warmup_steps = 0;
    // Fault injection: multiplies the straight-through score gradient.
    double score_grad_sign = 1.0;

    bool uses_topv() const {
        return variant == PrunerVariant::magnitude || variant == PrunerVariant::movement;
    }
    bool has_trainable_scores() const { return variant != PrunerVariant::magnitude; }
    double default_score_init() const;
    double effective_score_init() const { return score_init.value_or(default_score_init()); }
    void validate() const;
};

// A prunable weight matrix with its importance scores and current mask.
struct MaskedLayer {
    std::string name;
    Tensor2D weights;
    Tensor2D scores;
    Mask mask;
    // dM/dS of the current hard-concrete sample; empty for the other variants.
    Tensor2D score_gate;

    MaskedLayer() = default;
    MaskedLayer(std::string layer_name, Tensor2D w);

    std::string weight_param() const { return name + ".W"; }
    std::string score_param() const { return name + ".S"; }
    std::size_t kept_count() const;
};

void init_scores(MaskedLayer& layer, const PrunerConfig& config);

// Masks for the given layers. `keep_fraction` is required for Top_v
// variants and ignored otherwise; `rng` is required for l0 in train mode.
// Hard-concrete train samples also return their gate factors via `gates`.
std::vector<Mask> compute_mask(std::span<MaskedLayer* const> layers, const PrunerConfig& config,
                               std::optional<double> keep_fraction, Mode mode,
                               std::mt19937_64* rng = nullptr,
                               std::vector<Tensor2D>* gates = nullptr);

// compute_mask followed by storing masks (and gate factors) into the layers.
void refresh_masks(std::span<MaskedLayer* const> layers, const PrunerConfig& config,
                   std::optional<double> keep_fraction, Mode mode, std::mt19937_64* rng = nullptr);

// Regularization coefficient at `step` after the optional linear warm-up.
double regularization_weight(const PrunerConfig& config, std::int64_t step);

// lambda_mvp * sum sigma(S) (soft movement), lambda_l0 * E[L0] (l0), or a
// constant zero. Scores are taken from the graph's bound `<layer>.S`
// parameters when present, otherwise bound here.
ad::Var regularization_term(ad::Graph& g, std::span<MaskedLayer* const> layers,
                            const PrunerConfig& config, std::int64_t step = 0);

// Mutable per-run pruning state: the score optimizer and hard-concrete noise.
class PrunerState {
public:
    PrunerState(PrunerConfig config, std::uint64_t seed);

    const PrunerConfig& config() const { return config_; }
    std::mt19937_64& rng() { return rng_; }

    // Score update for trainable variants, S = |W| for magnitude, then mask
    // refresh with `keep_fraction` (Top_v variants) in train mode.
    void step(std::span<MaskedLayer* const> layers, const ad::GradientStore& grads,
              std::optional<double> keep_fraction);

private:
    PrunerConfig config_;
    Optimizer score_optimizer_;
    std::mt19937_64 rng_;
};

}  // namespace prunelab
