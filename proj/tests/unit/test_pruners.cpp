#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prunelab/errors.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruners.hpp"
#include "prunelab/tasks.hpp"
#include "prunelab/training.hpp"
#include "test_util.hpp"

namespace ad = prunelab::ad;
using prunelab::MaskedLayer;
using prunelab::PrunerConfig;
using prunelab::PrunerVariant;
using prunelab::Tensor2D;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

PrunerConfig config_for(PrunerVariant v) {
    PrunerConfig c;
    c.variant = v;
    return c;
}

std::vector<MaskedLayer*> ptrs(std::vector<MaskedLayer>& layers) {
    std::vector<MaskedLayer*> out;
    for (auto& l : layers) out.push_back(&l);
    return out;
}

}  // namespace

TEST(InitScores, MovementStartsAtZero) {
    MaskedLayer layer("l", Tensor2D{{1, -2}, {3, 4}});
    layer.scores.fill(7.0);
    prunelab::init_scores(layer, config_for(PrunerVariant::movement));
    EXPECT_EQ(layer.scores, Tensor2D::zeros(2, 2));
}

TEST(InitScores, MagnitudeIsAbsoluteWeight) {
    MaskedLayer layer("l", Tensor2D{{-3, 1}});
    prunelab::init_scores(layer, config_for(PrunerVariant::magnitude));
    EXPECT_EQ(layer.scores, (Tensor2D{{3, 1}}));
}

TEST(InitScores, SoftMovementStartsJustAboveThreshold) {
    auto c = config_for(PrunerVariant::soft_movement);
    c.tau = 0.25;
    MaskedLayer layer("l", Tensor2D(2, 2, 1.0));
    prunelab::init_scores(layer, c);
    EXPECT_EQ(prunelab::threshold_mask(layer.scores, c.tau), Tensor2D::ones(2, 2));
}

TEST(InitScores, L0KeepProbabilityFollowsClosedForm) {
    auto c = config_for(PrunerVariant::l0);
    c.score_init = 2.0;
    MaskedLayer layer("l", Tensor2D(3, 3, 0.1));
    prunelab::init_scores(layer, c);
    const auto& p = c.hard_concrete;
    const double want = logistic(2.0 - p.b * std::log(-p.l / p.r));
    EXPECT_NEAR(prunelab::expected_l0(layer.scores, p) / 9.0, want, 1e-15);
}

TEST(ComputeMask, MagnitudeKeepsLargestAbsoluteWeights) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D{{0.5, -0.2}, {0.1, 0.9}})};
    const auto m = prunelab::compute_mask(ptrs(layers), config_for(PrunerVariant::magnitude), 0.5,
                                          prunelab::Mode::train);
    EXPECT_EQ(m[0], (Tensor2D{{1, 0}, {0, 1}}));
}

TEST(ComputeMask, MovementTiesKeepLowestIndices) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(2, 2, 1.0))};
    const auto m = prunelab::compute_mask(ptrs(layers), config_for(PrunerVariant::movement), 0.5,
                                          prunelab::Mode::train);
    EXPECT_EQ(m[0], (Tensor2D{{1, 1}, {0, 0}}));
}

TEST(ComputeMask, SoftMovementIsSignTest) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(1, 2, 1.0))};
    layers[0].scores = Tensor2D{{-0.1, 0.3}};
    const auto m = prunelab::compute_mask(ptrs(layers), config_for(PrunerVariant::soft_movement), std::nullopt,
                                          prunelab::Mode::train);
    EXPECT_EQ(m[0], (Tensor2D{{0, 1}}));
}

TEST(ComputeMask, TopvWithoutFractionThrows) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(2, 2, 1.0))};
    EXPECT_THROW(prunelab::compute_mask(ptrs(layers), config_for(PrunerVariant::movement), std::nullopt,
                                        prunelab::Mode::train),
                 prunelab::ConfigError);
}

TEST(ComputeMask, L0TrainNeedsNoiseSource) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(2, 2, 1.0))};
    EXPECT_THROW(prunelab::compute_mask(ptrs(layers), config_for(PrunerVariant::l0), std::nullopt,
                                        prunelab::Mode::train),
                 prunelab::ContractError);
}

TEST(ComputeMask, MagnitudeOrderingLocalAndGlobal) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<MaskedLayer> layers{MaskedLayer("a", testutil::uniform(4, 6, rng)),
                                        MaskedLayer("b", testutil::uniform(5, 3, rng, -0.5, 0.5))};
        for (auto loc : {prunelab::Locality::local, prunelab::Locality::global}) {
            auto c = config_for(PrunerVariant::magnitude);
            c.locality = loc;
            const auto masks = prunelab::compute_mask(ptrs(layers), c, 0.3, prunelab::Mode::train);
            double min_kept = INFINITY, max_pruned = 0.0;
            for (std::size_t li = 0; li < layers.size(); ++li) {
                if (loc == prunelab::Locality::local) {
                    min_kept = INFINITY;
                    max_pruned = 0.0;
                }
                for (std::size_t e = 0; e < masks[li].size(); ++e) {
                    const double w = std::abs(layers[li].weights[e]);
                    if (masks[li][e] == 1.0) {
                        min_kept = std::min(min_kept, w);
                    } else {
                        max_pruned = std::max(max_pruned, w);
                    }
                }
                if (loc == prunelab::Locality::local) {
                    EXPECT_GE(min_kept, max_pruned);
                }
            }
            EXPECT_GE(min_kept, max_pruned);
        }
    }
}

TEST(Regularization, SoftMovementSigmoidSum) {
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(2, 2, 1.0))};
    auto c = config_for(PrunerVariant::soft_movement);
    c.lambda_mvp = 1.0;
    ad::Graph g;
    EXPECT_EQ(g.value(prunelab::regularization_term(g, ptrs(layers), c))(0, 0), 2.0);
}

TEST(Regularization, ZeroLambdaIsZero) {
    std::mt19937_64 rng(1);
    std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(2, 2, 1.0))};
    layers[0].scores = testutil::uniform(2, 2, rng);
    for (auto v : {PrunerVariant::soft_movement, PrunerVariant::l0, PrunerVariant::movement}) {
        ad::Graph g;
        EXPECT_EQ(g.value(prunelab::regularization_term(g, ptrs(layers), config_for(v)))(0, 0), 0.0);
    }
}

TEST(Regularization, SoftMovementGradientIsScaledSigmoidDerivative) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<MaskedLayer> layers{MaskedLayer("l", Tensor2D(3, 2, 1.0))};
        layers[0].scores = testutil::uniform(3, 2, rng);
        auto c = config_for(PrunerVariant::soft_movement);
        c.lambda_mvp = 0.7;
        ad::Graph g;
        const auto grads = g.backward(prunelab::regularization_term(g, ptrs(layers), c));
        const Tensor2D& gs = grads.at("l.S");
        for (std::size_t e = 0; e < gs.size(); ++e) {
            const double sg = logistic(layers[0].scores[e]);
            EXPECT_NEAR(gs[e], 0.7 * sg * (1.0 - sg), 1e-6);
        }
    }
}

TEST(Regularization, WarmupRampsLinearly) {
    auto c = config_for(PrunerVariant::l0);
    c.lambda_l0 = 0.4;
    c.lambda_warmup_steps = 10;
    EXPECT_EQ(prunelab::regularization_weight(c, 0), 0.0);
    EXPECT_NEAR(prunelab::regularization_weight(c, 5), 0.2, 1e-15);
    EXPECT_EQ(prunelab::regularization_weight(c, 10), 0.4);
    EXPECT_EQ(prunelab::regularization_weight(c, 50), 0.4);
}

TEST(PrunerStep, MovementSingleStepFromZero) {
    std::mt19937_64 rng(3);
    const Tensor2D w = testutil::uniform(3, 4, rng), x = testutil::uniform(4, 2, rng), up = testutil::uniform(3, 2, rng);
    std::vector<MaskedLayer> layers{MaskedLayer("l", w)};
    auto c = config_for(PrunerVariant::movement);
    c.score_optimizer = {prunelab::OptimizerKind::sgd, 0.05, 0.0};
    prunelab::init_scores(layers[0], c);
    ad::Graph g;
    const auto a = prunelab::masked_linear(g, g.parameter("l.W", w), g.parameter("l.S", layers[0].scores),
                                           layers[0].mask, g.constant(x));
    const auto grads = g.backward(ad::sum(g, ad::hadamard(g, a, g.constant(up))));
    prunelab::PrunerState state(c, 0);
    state.step(ptrs(layers), grads, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double movement = 0.0;
            for (std::size_t b = 0; b < 2; ++b) movement += up(i, b) * w(i, j) * x(j, b);
            EXPECT_NEAR(layers[0].scores(i, j), -0.05 * movement, 1e-15);
        }
    }
}

TEST(PrunerStep, MagnitudeTracksNewWeights) {
    std::mt19937_64 rng(4);
    std::vector<MaskedLayer> layers{MaskedLayer("l", testutil::uniform(3, 3, rng))};
    const auto c = config_for(PrunerVariant::magnitude);
    prunelab::init_scores(layers[0], c);
    layers[0].weights = testutil::uniform(3, 3, rng);
    prunelab::PrunerState state(c, 0);
    state.step(ptrs(layers), prunelab::ad::GradientStore{}, 0.5);
    for (std::size_t e = 0; e < 9; ++e) EXPECT_EQ(layers[0].scores[e], std::abs(layers[0].weights[e]));
}

namespace {

// Short movement run on a small MLP, reporting masks and scores per step.
struct Trace {
    std::vector<std::vector<Tensor2D>> masks;
    std::vector<std::vector<Tensor2D>> scores_before;
    std::vector<std::vector<Tensor2D>> scores_after;
};

Trace movement_trace(std::int64_t steps) {
    prunelab::TaskSpec ts;
    ts.train_size = 256;
    ts.eval_size = 32;
    const auto tasks = prunelab::generate_tasks(ts);
    prunelab::ModelSpec spec;
    spec.hidden_width = 16;
    spec.hidden_layers = 2;
    auto model = prunelab::make_model(spec, 1);
    prunelab::FinePruneRequest req;
    req.pruner.variant = PrunerVariant::movement;
    req.schedule = prunelab::SparsitySchedule::with_default_phases(0.0, 0.7, steps);
    req.optimizer.steps = steps;
    req.optimizer.log_every = steps;
    Trace tr;
    prunelab::fineprune(*model, tasks.target_train, prunelab::Dataset{}, req,
                        [&](const prunelab::StepObservation& o) {
                            tr.masks.emplace_back(o.masks_used.begin(), o.masks_used.end());
                            tr.scores_before.emplace_back(o.scores_before.begin(), o.scores_before.end());
                            std::vector<Tensor2D> after;
                            for (const auto* l : o.layers) after.push_back(l->scores);
                            tr.scores_after.push_back(std::move(after));
                        });
    return tr;
}

}  // namespace

TEST(PrunerStep, MaskedWeightsCanRecover) {
    const Trace tr = movement_trace(120);
    std::size_t recoveries = 0;
    for (std::size_t t = 1; t < tr.masks.size(); ++t) {
        for (std::size_t li = 0; li < tr.masks[t].size(); ++li) {
            for (std::size_t e = 0; e < tr.masks[t][li].size(); ++e) {
                if (tr.masks[t - 1][li][e] == 0.0 && tr.masks[t][li][e] == 1.0) ++recoveries;
            }
        }
    }
    EXPECT_GT(recoveries, 0u);
}

TEST(PrunerStep, MaskedScoresKeepMoving) {
    const Trace tr = movement_trace(60);
    std::size_t masked = 0, moved = 0;
    for (std::size_t t = 0; t < tr.masks.size(); ++t) {
        for (std::size_t li = 0; li < tr.masks[t].size(); ++li) {
            for (std::size_t e = 0; e < tr.masks[t][li].size(); ++e) {
                if (tr.masks[t][li][e] != 0.0) continue;
                ++masked;
                moved += tr.scores_after[t][li][e] != tr.scores_before[t][li][e] ? 1 : 0;
            }
        }
    }
    ASSERT_GT(masked, 0u);
    EXPECT_GT(moved, masked / 2);
}

TEST(PrunerConfigValidation, RejectsNegativeLambda) {
    auto c = config_for(PrunerVariant::soft_movement);
    c.lambda_mvp = -1.0;
    EXPECT_THROW(c.validate(), prunelab::ConfigError);
}

TEST(PrunerNames, RoundTrip) {
    for (auto v : {PrunerVariant::magnitude, PrunerVariant::movement, PrunerVariant::soft_movement,
                   PrunerVariant::l0}) {
        EXPECT_EQ(prunelab::parse_pruner_variant(prunelab::to_string(v)), v);
    }
    EXPECT_THROW(prunelab::parse_pruner_variant("random"), prunelab::ConfigError);
}
