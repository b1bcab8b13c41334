#include "prunelab/model.hpp"

#include <cmath>
#include <random>

#include "prunelab/errors.hpp"
#include "prunelab/kernels/kernels.hpp"
#include "prunelab/masking.hpp"

namespace prunelab {

std::string_view to_string(ModelKind k) { return k == ModelKind::mlp ? "mlp" : "mini_transformer"; }

ModelKind parse_model_kind(std::string_view text) {
    if (text == "mlp") return ModelKind::mlp;
    if (text == "mini_transformer") return ModelKind::mini_transformer;
    throw ConfigError("unknown model '" + std::string(text) + "' (expected mlp or mini_transformer)");
}

void ModelSpec::validate() const {
    if (input_dim == 0 || num_classes < 2) throw ConfigError("model needs input_dim > 0 and >= 2 classes");
    if (kind == ModelKind::mlp) {
        if (hidden_width == 0 || hidden_layers == 0) throw ConfigError("mlp needs hidden layers of nonzero width");
    } else {
        if (model_dim == 0 || seq_len == 0 || blocks == 0) {
            throw ConfigError("mini transformer needs model_dim, seq_len and blocks > 0");
        }
        if (input_dim % seq_len != 0) {
            throw ConfigError("mini transformer: input_dim " + std::to_string(input_dim) +
                              " is not a multiple of seq_len " + std::to_string(seq_len));
        }
    }
}

namespace {

Tensor2D normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor2D t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

// --- Model ------------------------------------------------------------------

std::vector<MaskedLayer*> Model::prunable_layers() {
    std::vector<MaskedLayer*> out;
    for (auto& l : layers_) out.push_back(&l);
    return out;
}

std::vector<const MaskedLayer*> Model::prunable_layers() const {
    std::vector<const MaskedLayer*> out;
    for (const auto& l : layers_) out.push_back(&l);
    return out;
}

DenseParam& Model::dense(const std::string& name) {
    for (auto& p : dense_) {
        if (p.name == name) return p;
    }
    throw IndexError("model has no dense parameter '" + name + "'");
}

const DenseParam& Model::dense(const std::string& name) const {
    return const_cast<Model*>(this)->dense(name);
}

std::size_t Model::prunable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size();
    return n;
}

ad::Var Model::bind_dense(ad::Graph& g, const DenseParam& p, const ForwardOptions& options) const {
    if (options.mode == Mode::train && p.trainable) return g.parameter(p.name, p.value);
    return g.constant(p.value);
}

ad::Var Model::apply_layer(ad::Graph& g, const MaskedLayer& layer, ad::Var h,
                           const ForwardOptions& options) const {
    const bool train = options.mode == Mode::train;
    const PrunerConfig* pruner = options.pruner;
    ad::Var w = train ? g.parameter(layer.weight_param(), layer.weights) : g.constant(layer.weights);
    std::optional<ad::Var> s;
    if (train && pruner && pruner->has_trainable_scores()) {
        s = g.parameter(layer.score_param(), layer.scores);
    }
    MaskedLinearOptions mopts;
    if (pruner) mopts.score_grad_sign = pruner->score_grad_sign;
    if (train && !layer.score_gate.empty()) mopts.score_gate = &layer.score_gate;
    if (!train && pruner && pruner->variant == PrunerVariant::l0) {
        const Mask test_mask = hard_concrete_test_mask(layer.scores, pruner->hard_concrete);
        return masked_linear(g, w, s, test_mask, h, mopts);
    }
    return masked_linear(g, w, s, layer.mask, h, mopts);
}

// --- MLP --------------------------------------------------------------------

MaskedMLP::MaskedMLP(const ModelSpec& spec, std::uint64_t seed) : Model(spec) {
    spec_.kind = ModelKind::mlp;
    spec_.validate();
    std::mt19937_64 rng(seed);
    std::size_t fan_in = spec_.input_dim;
    for (std::size_t i = 0; i < spec_.hidden_layers; ++i) {
        const std::string name = "layer" + std::to_string(i);
        layers_.emplace_back(name, normal_matrix(spec_.hidden_width, fan_in,
                                                 std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
        dense_.push_back({name + ".b", Tensor2D(spec_.hidden_width, 1, 0.0)});
        fan_in = spec_.hidden_width;
    }
    dense_.push_back({"head.W", normal_matrix(spec_.num_classes, fan_in,
                                              std::sqrt(1.0 / static_cast<double>(fan_in)), rng)});
    dense_.push_back({"head.b", Tensor2D(spec_.num_classes, 1, 0.0)});
}

ad::Var MaskedMLP::forward(ad::Graph& g, const Tensor2D& x, const ForwardOptions& options) {
    if (x.rows() != spec_.input_dim) {
        throw DimensionError("mlp forward: expected " + std::to_string(spec_.input_dim) +
                             " input rows, got " + x.shape_string());
    }
    ad::Var h = g.constant(x);
    for (const auto& layer : layers_) {
        ad::Var a = apply_layer(g, layer, h, options);
        h = ad::relu(g, ad::add_bias(g, a, bind_dense(g, dense(layer.name + ".b"), options)));
    }
    ad::Var logits = ad::matmul(g, bind_dense(g, dense("head.W"), options), h);
    return ad::add_bias(g, logits, bind_dense(g, dense("head.b"), options));
}

// --- Mini transformer ----------------------------------------------------------

MiniTransformer::MiniTransformer(const ModelSpec& spec, std::uint64_t seed) : Model(spec) {
    spec_.kind = ModelKind::mini_transformer;
    spec_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = spec_.model_dim;
    const std::size_t per_token = spec_.input_dim / spec_.seq_len;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

    dense_.push_back({"embed.tokens", normal_matrix(d, per_token, 1.0, rng), false});
    dense_.push_back({"embed.positions", normal_matrix(d, spec_.seq_len, 0.1, rng), false});
    for (std::size_t b = 0; b < spec_.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        for (const char* proj : {"query", "key", "value", "output"}) {
            layers_.emplace_back(p + proj, normal_matrix(d, d, proj_std, rng));
        }
        layers_.emplace_back(p + "ffn_in", normal_matrix(4 * d, d, std::sqrt(2.0 / static_cast<double>(d)), rng));
        layers_.emplace_back(p + "ffn_out",
                             normal_matrix(d, 4 * d, 0.5 / std::sqrt(static_cast<double>(4 * d)), rng));
        dense_.push_back({p + "ffn_in.b", Tensor2D(4 * d, 1, 0.0)});
        dense_.push_back({p + "ffn_out.b", Tensor2D(d, 1, 0.0)});
    }
    dense_.push_back({"head.W", normal_matrix(spec_.num_classes, d, proj_std, rng)});
    dense_.push_back({"head.b", Tensor2D(spec_.num_classes, 1, 0.0)});
}

Tensor2D MiniTransformer::embed(const Tensor2D& x) const {
    const std::size_t L = spec_.seq_len;
    const std::size_t per_token = spec_.input_dim / L;
    const std::size_t batch = x.cols();
    // tokens: per_token x (L * batch), column b*L + p holds features of token p.
    Tensor2D tokens(per_token, L * batch);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t p = 0; p < L; ++p) {
            for (std::size_t f = 0; f < per_token; ++f) tokens(f, b * L + p) = x(p * per_token + f, b);
        }
    }
    const Tensor2D& E = dense("embed.tokens").value;
    const Tensor2D& P = dense("embed.positions").value;
    Tensor2D h(spec_.model_dim, L * batch);
    kernels::active().gemm_acc(h.data(), E.data(), tokens.data(), E.rows(), E.cols(), tokens.cols());
    for (std::size_t i = 0; i < h.rows(); ++i) {
        for (std::size_t c = 0; c < h.cols(); ++c) h(i, c) += P(i, c % L);
    }
    return h;
}

ad::Var MiniTransformer::forward(ad::Graph& g, const Tensor2D& x, const ForwardOptions& options) {
    if (x.rows() != spec_.input_dim) {
        throw DimensionError("transformer forward: expected " + std::to_string(spec_.input_dim) +
                             " input rows, got " + x.shape_string());
    }
    const std::size_t L = spec_.seq_len;
    ad::Var h = g.constant(embed(x));
    for (std::size_t b = 0; b < spec_.blocks; ++b) {
        const MaskedLayer* blk = &layers_[b * 6];
        const std::string p = "block" + std::to_string(b) + ".";
        ad::Var q = apply_layer(g, blk[0], h, options);
        ad::Var k = apply_layer(g, blk[1], h, options);
        ad::Var v = apply_layer(g, blk[2], h, options);
        ad::Var att = attention(g, q, k, v, L);
        h = ad::add(g, h, apply_layer(g, blk[3], att, options));
        ad::Var f = apply_layer(g, blk[4], h, options);
        f = ad::relu(g, ad::add_bias(g, f, bind_dense(g, dense(p + "ffn_in.b"), options)));
        f = apply_layer(g, blk[5], f, options);
        f = ad::add_bias(g, f, bind_dense(g, dense(p + "ffn_out.b"), options));
        h = ad::add(g, h, f);
    }
    ad::Var pooled = mean_pool_tokens(g, h, L);
    ad::Var logits = ad::matmul(g, bind_dense(g, dense("head.W"), options), pooled);
    return ad::add_bias(g, logits, bind_dense(g, dense("head.b"), options));
}

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.kind == ModelKind::mlp) return std::make_unique<MaskedMLP>(spec, seed);
    return std::make_unique<MiniTransformer>(spec, seed);
}

// --- attention ops ----------------------------------------------------------

namespace {

Tensor2D column_block(const Tensor2D& t, std::size_t first, std::size_t count) {
    Tensor2D out(t.rows(), count);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) out(i, j) = t(i, first + j);
    }
    return out;
}

void add_column_block(Tensor2D& t, std::size_t first, const Tensor2D& block) {
    for (std::size_t i = 0; i < block.rows(); ++i) {
        for (std::size_t j = 0; j < block.cols(); ++j) t(i, first + j) += block(i, j);
    }
}

Tensor2D product(const Tensor2D& a, const Tensor2D& b) {
    Tensor2D c(a.rows(), b.cols());
    kernels::active().gemm_acc(c.data(), a.data(), b.data(), a.rows(), a.cols(), b.cols());
    return c;
}

}  // namespace

Tensor2D attention_weights(const Tensor2D& queries, const Tensor2D& keys) {
    require_same_shape(queries, keys, "attention_weights");
    const double s = 1.0 / std::sqrt(static_cast<double>(queries.rows()));
    return ad::softmax_columns(product(keys.transposed(), queries), s);
}

ad::Var attention(ad::Graph& g, ad::Var queries, ad::Var keys, ad::Var values, std::size_t seq_len) {
    const Tensor2D& Q = g.value(queries);
    const Tensor2D& K = g.value(keys);
    const Tensor2D& V = g.value(values);
    require_same_shape(Q, K, "attention (queries vs keys)");
    if (V.cols() != Q.cols() || seq_len == 0 || Q.cols() % seq_len != 0) {
        throw DimensionError("attention: " + Q.shape_string() + " / " + V.shape_string() +
                             " not divisible into sequences of " + std::to_string(seq_len));
    }
    const std::size_t batch = Q.cols() / seq_len;
    Tensor2D out(V.rows(), Q.cols());
    std::vector<Tensor2D> probs;
    probs.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t c0 = b * seq_len;
        Tensor2D P = attention_weights(column_block(Q, c0, seq_len), column_block(K, c0, seq_len));
        add_column_block(out, c0, product(column_block(V, c0, seq_len), P));
        probs.push_back(std::move(P));
    }
    return g.record(std::move(out), {queries, keys, values},
                    [queries, keys, values, seq_len, probs = std::move(probs)](ad::Graph& gr, ad::Var self) {
                        const Tensor2D& G = gr.grad(self);
                        const Tensor2D& Qv = gr.value(queries);
                        const Tensor2D& Kv = gr.value(keys);
                        const Tensor2D& Vv = gr.value(values);
                        const double s = 1.0 / std::sqrt(static_cast<double>(Qv.rows()));
                        Tensor2D dq = Tensor2D::zeros_like(Qv);
                        Tensor2D dk = Tensor2D::zeros_like(Kv);
                        Tensor2D dv = Tensor2D::zeros_like(Vv);
                        for (std::size_t b = 0; b < probs.size(); ++b) {
                            const std::size_t c0 = b * seq_len;
                            const Tensor2D& P = probs[b];
                            const Tensor2D Gb = column_block(G, c0, seq_len);
                            const Tensor2D Qb = column_block(Qv, c0, seq_len);
                            const Tensor2D Kb = column_block(Kv, c0, seq_len);
                            const Tensor2D Vb = column_block(Vv, c0, seq_len);
                            add_column_block(dv, c0, product(Gb, P.transposed()));
                            Tensor2D dP = product(Vb.transposed(), Gb);
                            // column softmax backward, then the 1/sqrt(d) scale
                            for (std::size_t j = 0; j < seq_len; ++j) {
                                double dot = 0.0;
                                for (std::size_t i = 0; i < seq_len; ++i) dot += P(i, j) * dP(i, j);
                                for (std::size_t i = 0; i < seq_len; ++i) dP(i, j) = s * P(i, j) * (dP(i, j) - dot);
                            }
                            add_column_block(dq, c0, product(Kb, dP));
                            add_column_block(dk, c0, product(Qb, dP.transposed()));
                        }
                        gr.accumulate(queries, dq);
                        gr.accumulate(keys, dk);
                        gr.accumulate(values, dv);
                    });
}

ad::Var mean_pool_tokens(ad::Graph& g, ad::Var h, std::size_t seq_len) {
    const Tensor2D& H = g.value(h);
    if (seq_len == 0 || H.cols() % seq_len != 0) {
        throw DimensionError("mean_pool_tokens: " + H.shape_string() + " not divisible by " +
                             std::to_string(seq_len));
    }
    const std::size_t batch = H.cols() / seq_len;
    const double inv = 1.0 / static_cast<double>(seq_len);
    Tensor2D out(H.rows(), batch);
    for (std::size_t i = 0; i < H.rows(); ++i) {
        for (std::size_t b = 0; b < batch; ++b) {
            double s = 0.0;
            for (std::size_t p = 0; p < seq_len; ++p) s += H(i, b * seq_len + p);
            out(i, b) = s * inv;
        }
    }
    return g.record(std::move(out), {h}, [h, seq_len, inv](ad::Graph& gr, ad::Var self) {
        const Tensor2D& G = gr.grad(self);
        Tensor2D& gh = gr.grad_buffer(h);
        for (std::size_t i = 0; i < gh.rows(); ++i) {
            for (std::size_t c = 0; c < gh.cols(); ++c) gh(i, c) += G(i, c / seq_len) * inv;
        }
    });
}

// --- reports ----------------------------------------------------------------

std::vector<LayerSparsity> remaining_weights_report(const Model& model, const PrunerConfig* pruner) {
    std::vector<LayerSparsity> out;
    for (const auto* layer : model.prunable_layers()) {
        LayerSparsity row{layer->name, 0, layer->weights.size()};
        if (pruner && pruner->variant == PrunerVariant::l0) {
            const Mask m = hard_concrete_test_mask(layer->scores, pruner->hard_concrete);
            for (double v : m.values()) row.kept += v != 0.0 ? 1 : 0;
        } else {
            row.kept = layer->kept_count();
        }
        out.push_back(row);
    }
    return out;
}

}  // namespace prunelab
