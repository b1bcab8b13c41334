#include "prunelab/pruners.hpp"

#include <algorithm>
#include <cmath>

#include "prunelab/errors.hpp"

namespace prunelab {

std::string_view to_string(PrunerVariant v) {
    switch (v) {
        case PrunerVariant::magnitude: return "magnitude";
        case PrunerVariant::movement: return "movement";
        case PrunerVariant::soft_movement: return "soft_movement";
        case PrunerVariant::l0: return "l0";
    }
    return "unknown";
}

PrunerVariant parse_pruner_variant(std::string_view text) {
    for (auto v : {PrunerVariant::magnitude, PrunerVariant::movement, PrunerVariant::soft_movement,
                   PrunerVariant::l0}) {
        if (text == to_string(v)) return v;
    }
    throw ConfigError("unknown pruner '" + std::string(text) +
                      "' (expected magnitude, movement, soft_movement or l0)");
}

std::string_view to_string(Locality l) { return l == Locality::local ? "local" : "global"; }

Locality parse_locality(std::string_view text) {
    if (text == "local") return Locality::local;
    if (text == "global") return Locality::global;
    throw ConfigError("unknown locality '" + std::string(text) + "' (expected local or global)");
}

double PrunerConfig::default_score_init() const {
    // Soft movement thresholds with a strict S > tau. Starting a hair above
    // tau keeps every weight at step 0; zero would start fully pruned.
    if (variant == PrunerVariant::soft_movement) return tau + 1e-3;
    return 0.0;
}

void PrunerConfig::validate() const {
    if (lambda_mvp < 0.0) throw ConfigError("lambda_mvp must be nonnegative");
    if (lambda_l0 < 0.0) throw ConfigError("lambda_l0 must be nonnegative");
    if (lambda_warmup_steps < 0) throw ConfigError("lambda_warmup_steps must be nonnegative");
    if (variant == PrunerVariant::l0) hard_concrete.validate();
    score_optimizer.validate();
}

MaskedLayer::MaskedLayer(std::string layer_name, Tensor2D w)
    : name(std::move(layer_name)),
      weights(std::move(w)),
      scores(Tensor2D::zeros_like(weights)),
      mask(Tensor2D::ones(weights.rows(), weights.cols())) {}

std::size_t MaskedLayer::kept_count() const {
    std::size_t n = 0;
    for (double m : mask.values()) n += m != 0.0 ? 1 : 0;
    return n;
}

void init_scores(MaskedLayer& layer, const PrunerConfig& config) {
    if (config.variant == PrunerVariant::magnitude) {
        layer.scores = Tensor2D::zeros_like(layer.weights);
        for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.scores[i] = std::abs(layer.weights[i]);
    } else {
        layer.scores = Tensor2D(layer.weights.rows(), layer.weights.cols(), config.effective_score_init());
    }
    layer.score_gate = Tensor2D{};
}

std::vector<Mask> compute_mask(std::span<MaskedLayer* const> layers, const PrunerConfig& config,
                               std::optional<double> keep_fraction, Mode mode, std::mt19937_64* rng,
                               std::vector<Tensor2D>* gates) {
    std::vector<Mask> masks;
    masks.reserve(layers.size());
    if (gates) gates->clear();

    if (config.uses_topv()) {
        if (!keep_fraction) {
            throw ConfigError(std::string(to_string(config.variant)) +
                              " pruning needs a kept fraction from the sparsity schedule");
        }
        std::vector<Tensor2D> magnitude;
        std::vector<const Tensor2D*> scores;
        if (config.variant == PrunerVariant::magnitude) {
            magnitude.reserve(layers.size());
            for (const auto* layer : layers) {
                Tensor2D s = Tensor2D::zeros_like(layer->weights);
                for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(layer->weights[i]);
                magnitude.push_back(std::move(s));
            }
            for (const auto& s : magnitude) scores.push_back(&s);
        } else {
            for (const auto* layer : layers) scores.push_back(&layer->scores);
        }
        if (config.locality == Locality::global) {
            return topv_global(std::span<const Tensor2D* const>(scores), *keep_fraction);
        }
        for (const auto* s : scores) masks.push_back(topv_local(*s, *keep_fraction));
        return masks;
    }

    if (config.variant == PrunerVariant::soft_movement) {
        for (const auto* layer : layers) masks.push_back(threshold_mask(layer->scores, config.tau));
        return masks;
    }

    // l0
    if (mode == Mode::eval) {
        for (const auto* layer : layers) masks.push_back(hard_concrete_test_mask(layer->scores, config.hard_concrete));
        return masks;
    }
    if (rng == nullptr) throw ContractError("compute_mask: l0 training masks need a noise generator");
    for (const auto* layer : layers) {
        const Tensor2D u = uniform_noise(layer->scores.rows(), layer->scores.cols(), *rng);
        HardConcreteSample sample = hard_concrete_sample(layer->scores, config.hard_concrete, u);
        if (gates) gates->push_back(hard_concrete_gate_factor(sample, config.hard_concrete));
        masks.push_back(std::move(sample.mask));
    }
    return masks;
}

void refresh_masks(std::span<MaskedLayer* const> layers, const PrunerConfig& config,
                   std::optional<double> keep_fraction, Mode mode, std::mt19937_64* rng) {
    std::vector<Tensor2D> gates;
    auto masks = compute_mask(layers, config, keep_fraction, mode, rng, &gates);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i]->mask = std::move(masks[i]);
        layers[i]->score_gate = i < gates.size() ? std::move(gates[i]) : Tensor2D{};
    }
}

double regularization_weight(const PrunerConfig& config, std::int64_t step) {
    double lambda = 0.0;
    if (config.variant == PrunerVariant::soft_movement) lambda = config.lambda_mvp;
    if (config.variant == PrunerVariant::l0) lambda = config.lambda_l0;
    if (config.lambda_warmup_steps > 0 && step < config.lambda_warmup_steps) {
        lambda *= static_cast<double>(step) / static_cast<double>(config.lambda_warmup_steps);
    }
    return lambda;
}

ad::Var regularization_term(ad::Graph& g, std::span<MaskedLayer* const> layers,
                            const PrunerConfig& config, std::int64_t step) {
    const double lambda = regularization_weight(config, step);
    const bool active = (config.variant == PrunerVariant::soft_movement ||
                         config.variant == PrunerVariant::l0) &&
                        lambda != 0.0 && !layers.empty();
    if (!active) return g.constant(Tensor2D(1, 1, 0.0));

    std::optional<ad::Var> total;
    for (auto* layer : layers) {
        auto bound = g.find_parameter(layer->score_param());
        ad::Var s = bound ? *bound : g.parameter(layer->score_param(), layer->scores);
        ad::Var term = config.variant == PrunerVariant::soft_movement
                           ? ad::sum(g, ad::sigmoid(g, s))
                           : expected_l0(g, s, config.hard_concrete);
        total = total ? ad::add(g, *total, term) : term;
    }
    return ad::scale(g, *total, lambda);
}

PrunerState::PrunerState(PrunerConfig config, std::uint64_t seed)
    : config_(std::move(config)), score_optimizer_(config_.score_optimizer), rng_(seed) {
    config_.validate();
}

void PrunerState::step(std::span<MaskedLayer* const> layers, const ad::GradientStore& grads,
                       std::optional<double> keep_fraction) {
    for (auto* layer : layers) {
        if (config_.variant == PrunerVariant::magnitude) {
            for (std::size_t i = 0; i < layer->weights.size(); ++i) {
                layer->scores[i] = std::abs(layer->weights[i]);
            }
            continue;
        }
        if (const Tensor2D* gs = grads.find(layer->score_param())) {
            score_optimizer_.update(layer->score_param(), layer->scores, *gs);
        }
    }
    refresh_masks(layers, config_, keep_fraction, Mode::train, &rng_);
}

}  // namespace prunelab
