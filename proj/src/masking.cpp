#include "prunelab/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "prunelab/errors.hpp"
#include "prunelab/kernels/kernels.hpp"

namespace prunelab {

void HardConcreteParams::validate() const {
    if (!(b > 0.0) || !(l < 0.0) || !(r > 1.0)) {
        throw ConfigError("hard-concrete needs b > 0, l < 0, r > 1 (got b=" + std::to_string(b) +
                          ", l=" + std::to_string(l) + ", r=" + std::to_string(r) + ")");
    }
}

double HardConcreteParams::log_ratio_shift() const { return b * std::log(-l / r); }

namespace {

void check_fraction(double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("Top_v fraction must lie in [0,1], got " + std::to_string(v));
    }
}

struct Ranked {
    double score;
    std::size_t matrix;
    std::size_t flat;
};

// Strict total order: larger score first, then earlier (matrix, flat).
bool ranks_before(const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.matrix != b.matrix) return a.matrix < b.matrix;
    return a.flat < b.flat;
}

}  // namespace

std::size_t topv_keep_count(double keep_fraction, std::size_t count) {
    check_fraction(keep_fraction);
    const double k = std::round(keep_fraction * static_cast<double>(count));
    return std::min(count, static_cast<std::size_t>(std::max(0.0, k)));
}

std::vector<Mask> topv_global(std::span<const Tensor2D* const> scores, double keep_fraction) {
    if (scores.empty()) throw ConfigError("topv_global: empty score list");
    check_fraction(keep_fraction);

    std::vector<Ranked> pool;
    std::size_t total = 0;
    for (const auto* s : scores) total += s->size();
    pool.reserve(total);
    for (std::size_t m = 0; m < scores.size(); ++m) {
        const Tensor2D& s = *scores[m];
        for (std::size_t f = 0; f < s.size(); ++f) pool.push_back({s[f], m, f});
    }

    const std::size_t k = topv_keep_count(keep_fraction, total);
    if (k > 0 && k < pool.size()) {
        std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1), pool.end(),
                         ranks_before);
    }

    std::vector<Mask> masks;
    masks.reserve(scores.size());
    for (const auto* s : scores) masks.emplace_back(s->rows(), s->cols(), 0.0);
    for (std::size_t i = 0; i < k; ++i) masks[pool[i].matrix][pool[i].flat] = 1.0;
    return masks;
}

std::vector<Mask> topv_global(std::span<const Tensor2D> scores, double keep_fraction) {
    std::vector<const Tensor2D*> ptrs;
    ptrs.reserve(scores.size());
    for (const auto& s : scores) ptrs.push_back(&s);
    return topv_global(std::span<const Tensor2D* const>(ptrs), keep_fraction);
}

Mask topv_local(const Tensor2D& scores, double keep_fraction) {
    const Tensor2D* one[] = {&scores};
    return std::move(topv_global(std::span<const Tensor2D* const>(one), keep_fraction).front());
}

Mask threshold_mask(const Tensor2D& scores, double tau) {
    Mask m(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.size(); ++i) m[i] = scores[i] > tau ? 1.0 : 0.0;
    return m;
}

HardConcreteSample hard_concrete_sample(const Tensor2D& scores, const HardConcreteParams& params,
                                        const Tensor2D& noise) {
    params.validate();
    require_same_shape(scores, noise, "hard_concrete_sample");
    HardConcreteSample out{Tensor2D::zeros_like(scores), Tensor2D::zeros_like(scores),
                           Tensor2D::zeros_like(scores)};
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double u = noise[i];
        if (!(u > 0.0 && u < 1.0)) {
            throw DomainError("hard_concrete_sample: noise must lie strictly inside (0,1), got " +
                              std::to_string(u));
        }
        const double s_bar = ad::sigmoid((std::log(u) - std::log1p(-u) + scores[i]) / params.b);
        const double z = (params.r - params.l) * s_bar + params.l;
        out.s_bar[i] = s_bar;
        out.z[i] = z;
        out.mask[i] = std::min(1.0, std::max(0.0, z));
    }
    return out;
}

Tensor2D hard_concrete_gate_factor(const HardConcreteSample& sample, const HardConcreteParams& params) {
    Tensor2D f = Tensor2D::zeros_like(sample.s_bar);
    const double c = (params.r - params.l) / params.b;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double z = sample.z[i];
        if (z >= 0.0 && z <= 1.0) f[i] = c * sample.s_bar[i] * (1.0 - sample.s_bar[i]);
    }
    return f;
}

Mask hard_concrete_test_mask(const Tensor2D& scores, const HardConcreteParams& params) {
    params.validate();
    Mask m(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double z = (params.r - params.l) * ad::sigmoid(scores[i]) + params.l;
        m[i] = std::min(1.0, std::max(0.0, z));
    }
    return m;
}

double expected_l0(const Tensor2D& scores, const HardConcreteParams& params) {
    params.validate();
    const double shift = params.log_ratio_shift();
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += ad::sigmoid(scores[i] - shift);
    return total;
}

ad::Var expected_l0(ad::Graph& g, ad::Var scores, const HardConcreteParams& params) {
    params.validate();
    return ad::sum(g, ad::sigmoid(g, ad::add_scalar(g, scores, -params.log_ratio_shift())));
}

Tensor2D uniform_noise(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Tensor2D u(rows, cols);
    for (std::size_t i = 0; i < u.size(); ++i) {
        double v = dist(rng);
        while (v <= 0.0) v = dist(rng);
        u[i] = v;
    }
    return u;
}

ad::Var masked_linear(ad::Graph& g, ad::Var weights, std::optional<ad::Var> scores,
                      const Mask& mask, ad::Var x, const MaskedLinearOptions& options) {
    const Tensor2D& W = g.value(weights);
    const Tensor2D& X = g.value(x);
    require_same_shape(W, mask, "masked_linear (weights vs mask)");
    if (scores) require_same_shape(W, g.value(*scores), "masked_linear (weights vs scores)");
    if (options.score_gate) require_same_shape(W, *options.score_gate, "masked_linear (score gate)");
    if (W.cols() != X.rows()) {
        throw DimensionError("masked_linear: weights " + W.shape_string() + " cannot multiply input " +
                             X.shape_string());
    }

    const auto& k = kernels::active();
    Tensor2D wm(W.rows(), W.cols());
    k.mul(wm.data(), W.data(), mask.data(), wm.size());
    Tensor2D out(W.rows(), X.cols());
    k.gemm_acc(out.data(), wm.data(), X.data(), W.rows(), W.cols(), X.cols());

    std::vector<ad::Var> parents{weights, x};
    if (scores) parents.push_back(*scores);
    std::optional<Tensor2D> gate;
    if (options.score_gate) gate = *options.score_gate;

    return g.record(
        std::move(out), std::move(parents),
        [weights, scores, x, mask, wm = std::move(wm), gate = std::move(gate),
         sign = options.score_grad_sign](ad::Graph& gr, ad::Var self) {
            const auto& kk = kernels::active();
            const Tensor2D& G = gr.grad(self);
            const Tensor2D& Xv = gr.value(x);
            const bool want_w = gr.requires_grad(weights);
            const bool want_s = scores && gr.requires_grad(*scores);
            if (want_w || want_s) {
                // P = G x^T, the unmasked per-connection gradient.
                const Tensor2D xt = Xv.transposed();
                Tensor2D P(G.rows(), xt.cols());
                kk.gemm_acc(P.data(), G.data(), xt.data(), G.rows(), G.cols(), xt.cols());
                if (want_w) kk.mul_acc(gr.grad_buffer(weights).data(), P.data(), mask.data(), P.size());
                if (want_s) {
                    Tensor2D ps(P.rows(), P.cols());
                    kk.mul(ps.data(), P.data(), gr.value(weights).data(), P.size());
                    if (gate) kk.mul(ps.data(), ps.data(), gate->data(), ps.size());
                    if (sign != 1.0) kk.scale(ps.data(), ps.data(), sign, ps.size());
                    gr.accumulate(*scores, ps);
                }
            }
            if (gr.requires_grad(x)) {
                const Tensor2D wmt = wm.transposed();
                kk.gemm_acc(gr.grad_buffer(x).data(), wmt.data(), G.data(), wmt.rows(), wmt.cols(),
                            G.cols());
            }
        });
}

}  // namespace prunelab
