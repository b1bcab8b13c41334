#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "prunelab/errors.hpp"
#include "prunelab/model.hpp"
#include "test_util.hpp"

namespace ad = prunelab::ad;
using prunelab::ModelKind;
using prunelab::ModelSpec;
using prunelab::Tensor2D;

namespace {

ModelSpec small_mlp() {
    ModelSpec s;
    s.input_dim = 5;
    s.num_classes = 3;
    s.hidden_width = 4;
    s.hidden_layers = 2;
    return s;
}

ModelSpec small_transformer() {
    ModelSpec s;
    s.kind = ModelKind::mini_transformer;
    s.input_dim = 8;
    s.num_classes = 3;
    s.model_dim = 6;
    s.seq_len = 4;
    s.blocks = 2;
    return s;
}

Tensor2D forward_eval(prunelab::Model& m, const Tensor2D& x, const prunelab::PrunerConfig* pruner = nullptr) {
    ad::Graph g;
    return g.value(m.forward(g, x, prunelab::ForwardOptions{prunelab::Mode::eval, pruner}));
}

// Plain loops: relu(W h + b) per layer, then the linear head.
Tensor2D reference_mlp(const prunelab::Model& m, const Tensor2D& x) {
    Tensor2D h = x;
    auto affine = [](const Tensor2D& w, const Tensor2D& b, const Tensor2D& in) {
        Tensor2D out(w.rows(), in.cols());
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t c = 0; c < in.cols(); ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < w.cols(); ++k) acc += w(i, k) * in(k, c);
                out(i, c) = acc + b(i, 0);
            }
        }
        return out;
    };
    for (const auto* layer : m.prunable_layers()) {
        h = affine(layer->weights, m.dense(layer->name + ".b").value, h);
        for (std::size_t e = 0; e < h.size(); ++e) h[e] = std::max(0.0, h[e]);
    }
    return affine(m.dense("head.W").value, m.dense("head.b").value, h);
}

}  // namespace

TEST(MaskedMLP, AllOnesMaskMatchesDenseReference) {
    std::mt19937_64 rng(2);
    auto m = prunelab::make_model(small_mlp(), 7);
    for (auto& p : m->dense_params()) p.value = testutil::normal(p.value.rows(), p.value.cols(), rng, 0.3);
    const Tensor2D x = testutil::normal(5, 6, rng);
    const Tensor2D got = forward_eval(*m, x), want = reference_mlp(*m, x);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t e = 0; e < got.size(); ++e) EXPECT_NEAR(got[e], want[e], 1e-12);
}

TEST(MaskedMLP, ZeroMasksLeaveOnlyBiasPath) {
    std::mt19937_64 rng(3);
    auto m = prunelab::make_model(small_mlp(), 1);
    for (auto& p : m->dense_params()) p.value = testutil::normal(p.value.rows(), p.value.cols(), rng);
    for (auto* l : m->prunable_layers()) l->mask = Tensor2D::zeros_like(l->weights);
    const Tensor2D out = forward_eval(*m, testutil::normal(5, 3, rng));
    Tensor2D h = m->dense("layer0.b").value;
    for (std::size_t e = 0; e < h.size(); ++e) h[e] = std::max(0.0, h[e]);
    h = m->dense("layer1.b").value;  // layer1 input is masked away entirely
    for (std::size_t e = 0; e < h.size(); ++e) h[e] = std::max(0.0, h[e]);
    const Tensor2D& hw = m->dense("head.W").value;
    const Tensor2D& hb = m->dense("head.b").value;
    for (std::size_t i = 0; i < 3; ++i) {
        double want = hb(i, 0);
        for (std::size_t k = 0; k < h.rows(); ++k) want += hw(i, k) * h(k, 0);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, c), want, 1e-12);
    }
}

TEST(MaskedMLP, RejectsWrongInputRows) {
    auto m = prunelab::make_model(small_mlp(), 1);
    EXPECT_THROW(forward_eval(*m, Tensor2D(4, 2)), prunelab::DimensionError);
}

TEST(Model, EvalForwardIsDeterministicWithL0) {
    std::mt19937_64 rng(4);
    prunelab::PrunerConfig l0;
    l0.variant = prunelab::PrunerVariant::l0;
    for (const auto& spec : {small_mlp(), small_transformer()}) {
        auto m = prunelab::make_model(spec, 5);
        for (auto* l : m->prunable_layers()) l->scores = testutil::normal(l->weights.rows(), l->weights.cols(), rng);
        const Tensor2D x = testutil::normal(spec.input_dim, 4, rng);
        EXPECT_EQ(forward_eval(*m, x, &l0), forward_eval(*m, x, &l0));
    }
}

TEST(Model, SameSeedSameWeights) {
    auto a = prunelab::make_model(small_transformer(), 9), b = prunelab::make_model(small_transformer(), 9);
    auto la = a->prunable_layers(), lb = b->prunable_layers();
    ASSERT_EQ(la.size(), lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i]->weights, lb[i]->weights);
}

TEST(Attention, ColumnsSumToOne) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const Tensor2D a = prunelab::attention_weights(testutil::normal(6, 5, rng, 3.0), testutil::normal(6, 5, rng, 3.0));
        for (std::size_t c = 0; c < a.cols(); ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < a.rows(); ++r) {
                EXPECT_GE(a(r, c), 0.0);
                s += a(r, c);
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const Tensor2D k = testutil::normal(3, 8, rng), v = testutil::normal(2, 8, rng);
        const auto build = [&](ad::Graph& g, ad::Var q) {
            return testutil::weighted_sum(g, prunelab::attention(g, q, g.constant(k), g.constant(v), 4), seed);
        };
        EXPECT_LT(testutil::gradient_error(build, testutil::normal(3, 8, rng)), 1e-5) << "seed " << seed;
    }
}

TEST(MiniTransformer, EmbeddingsAreFrozen) {
    auto m = prunelab::make_model(small_transformer(), 2);
    EXPECT_FALSE(m->dense("embed.tokens").trainable);
    EXPECT_FALSE(m->dense("embed.positions").trainable);
    std::mt19937_64 rng(1);
    ad::Graph g;
    const auto out = m->forward(g, testutil::normal(8, 2, rng), prunelab::ForwardOptions{prunelab::Mode::train, nullptr});
    const auto grads = g.backward(ad::sum(g, out));
    EXPECT_FALSE(grads.contains("embed.tokens"));
    EXPECT_FALSE(grads.contains("embed.positions"));
    EXPECT_TRUE(grads.contains("block0.query.W"));
    EXPECT_TRUE(grads.contains("head.W"));
}

TEST(MiniTransformer, LayerNames) {
    auto m = prunelab::make_model(small_transformer(), 2);
    const auto layers = m->prunable_layers();
    ASSERT_EQ(layers.size(), 12u);
    EXPECT_EQ(layers[0]->name, "block0.query");
    EXPECT_EQ(layers[5]->name, "block0.ffn_out");
    EXPECT_EQ(layers[11]->name, "block1.ffn_out");
}

TEST(MiniTransformer, SeqLenMustDivideInput) {
    auto s = small_transformer();
    s.seq_len = 3;
    EXPECT_THROW(prunelab::make_model(s, 0), prunelab::ConfigError);
}

TEST(RemainingWeights, FreshModelKeepsEverything) {
    auto m = prunelab::make_model(ModelSpec{}, 0);
    const auto report = prunelab::remaining_weights_report(*m);
    ASSERT_EQ(report.size(), 6u);
    EXPECT_EQ(report[0].layer, "layer0");
    EXPECT_EQ(report[0].total, 64u * 32u);
    for (const auto& r : report) EXPECT_EQ(r.kept, r.total);
}

TEST(RemainingWeights, LocalAndGlobalTopv) {
    std::mt19937_64 rng(6);
    auto m = prunelab::make_model(small_mlp(), 0);
    for (auto loc : {prunelab::Locality::local, prunelab::Locality::global}) {
        prunelab::PrunerConfig c;
        c.variant = prunelab::PrunerVariant::magnitude;
        c.locality = loc;
        for (auto* l : m->prunable_layers()) prunelab::init_scores(*l, c);
        prunelab::refresh_masks(m->prunable_layers(), c, 0.1, prunelab::Mode::train);
        const auto report = prunelab::remaining_weights_report(*m, &c);
        std::size_t kept = 0, total = 0;
        for (const auto& r : report) {
            kept += r.kept;
            total += r.total;
            if (loc == prunelab::Locality::local) {
                EXPECT_EQ(r.kept, prunelab::topv_keep_count(0.1, r.total));
            }
        }
        if (loc == prunelab::Locality::global) {
            EXPECT_EQ(kept, prunelab::topv_keep_count(0.1, total));
        }
    }
}

TEST(Model, PrunableParameterCount) {
    auto mlp = prunelab::make_model(ModelSpec{}, 0);
    EXPECT_EQ(mlp->prunable_parameter_count(), 64u * 32u + 5u * 64u * 64u);
    auto tr = prunelab::make_model(small_transformer(), 0);
    EXPECT_EQ(tr->prunable_parameter_count(), 2u * (4u * 36u + 2u * 24u * 6u));
}
