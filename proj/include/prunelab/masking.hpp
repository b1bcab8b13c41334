#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "prunelab/autodiff.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

// Entries in {0,1} for Top_v and threshold masks, in [0,1] for hard-concrete.
using Mask = Tensor2D;

// Stretched hard-concrete gate: temperature b > 0, stretch interval (l, r)
// with l < 0 and r > 1.
struct HardConcreteParams {
    double b = 2.0 / 3.0;
    double l = -0.1;
    double r = 1.1;

    void validate() const;
    // b * log(-l / r); the logit shift between a score and its keep probability.
    double log_ratio_shift() const;
};

// Number of entries Top_v keeps out of `count`: round(v * count), clamped.
std::size_t topv_keep_count(double keep_fraction, std::size_t count);

// Keeps the round(v * n) largest entries of `scores`. Ties go to the smaller
// row-major flat index.
Mask topv_local(const Tensor2D& scores, double keep_fraction);

// Top_v over the pooled entries of every matrix. Ties go to the smaller
// (matrix index, flat index) pair. Masks come back in input order.
std::vector<Mask> topv_global(std::span<const Tensor2D* const> scores, double keep_fraction);
std::vector<Mask> topv_global(std::span<const Tensor2D> scores, double keep_fraction);

// 1 where score > tau (strict).
Mask threshold_mask(const Tensor2D& scores, double tau);

struct HardConcreteSample {
    Tensor2D s_bar;  // sigma((log u - log(1-u) + S) / b)
    Tensor2D z;      // (r - l) * s_bar + l
    Mask mask;       // min(1, relu(z))
};

// `noise` holds uniforms strictly inside (0, 1), shaped like `scores`.
HardConcreteSample hard_concrete_sample(const Tensor2D& scores, const HardConcreteParams& params,
                                        const Tensor2D& noise);

// dM/dS for a sample: ((r - l) / b) * s_bar * (1 - s_bar) on 0 <= z <= 1, else 0.
Tensor2D hard_concrete_gate_factor(const HardConcreteSample& sample, const HardConcreteParams& params);

// Deterministic evaluation mask min(1, relu((r - l) * sigma(S) + l)).
Mask hard_concrete_test_mask(const Tensor2D& scores, const HardConcreteParams& params);

// Sum over entries of P(gate > 0) = sigma(S - b log(-l/r)).
double expected_l0(const Tensor2D& scores, const HardConcreteParams& params);

// Differentiable expected_l0 as a 1x1 node.
ad::Var expected_l0(ad::Graph& g, ad::Var scores, const HardConcreteParams& params);

// Uniform noise in the open interval (0, 1).
Tensor2D uniform_noise(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

struct MaskedLinearOptions {
    // Per-entry multiplier on the score gradient (the hard-concrete dM/dS);
    // absent means straight-through (factor 1).
    const Tensor2D* score_gate = nullptr;
    // Fault injection for the verification suite's mutation test. Must be 1
    // for any real run.
    double score_grad_sign = 1.0;
};

// a = (W .* M) x with x holding one example per column.
// Backward: dL/dW = (G x^T) .* M, and straight through the mask,
// dL/dS = (G x^T) .* W (.* score_gate), so masked weights keep receiving
// score gradient. `scores` may be omitted when no score path is needed.
ad::Var masked_linear(ad::Graph& g, ad::Var weights, std::optional<ad::Var> scores,
                      const Mask& mask, ad::Var x, const MaskedLinearOptions& options = {});

}  // namespace prunelab
