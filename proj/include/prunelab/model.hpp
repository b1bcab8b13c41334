#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "prunelab/autodiff.hpp"
#include "prunelab/pruners.hpp"
#include "prunelab/schedule.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class ModelKind : std::uint8_t { mlp = 0, mini_transformer = 1 };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view text);

struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::size_t input_dim = 32;
    std::size_t num_classes = 8;
    // mlp
    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 6;
    // mini transformer
    std::size_t model_dim = 32;
    std::size_t seq_len = 16;
    std::size_t blocks = 2;

    void validate() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    // Decides score binding in train mode and the l0 test mask in eval mode.
    const PrunerConfig* pruner = nullptr;
};

// Non-prunable tensors a model owns besides its MaskedLayers.
struct DenseParam {
    std::string name;
    Tensor2D value;
    bool trainable = true;  // false for frozen embeddings
};

// Common surface of the prunable architectures. Inputs carry one example
// per column (input_dim x batch); forward returns num_classes x batch logits.
class Model {
public:
    virtual ~Model() = default;

    const ModelSpec& spec() const { return spec_; }

    virtual ad::Var forward(ad::Graph& g, const Tensor2D& x, const ForwardOptions& options) = 0;
    virtual std::unique_ptr<Model> clone() const = 0;

    std::vector<MaskedLayer*> prunable_layers();
    std::vector<const MaskedLayer*> prunable_layers() const;
    std::vector<DenseParam>& dense_params() { return dense_; }
    const std::vector<DenseParam>& dense_params() const { return dense_; }
    DenseParam& dense(const std::string& name);
    const DenseParam& dense(const std::string& name) const;

    std::size_t prunable_parameter_count() const;

protected:
    explicit Model(ModelSpec spec) : spec_(spec) {}

    // Binds a dense tensor as a graph parameter (train mode, trainable) or a constant.
    ad::Var bind_dense(ad::Graph& g, const DenseParam& p, const ForwardOptions& options) const;
    // (W .* M) h with the mask chosen for the mode, binding W (and S) as needed.
    ad::Var apply_layer(ad::Graph& g, const MaskedLayer& layer, ad::Var h,
                        const ForwardOptions& options) const;

    ModelSpec spec_;
    std::vector<MaskedLayer> layers_;
    std::vector<DenseParam> dense_;
};

// Stack of masked ReLU layers with unmasked biases and an unmasked linear head.
class MaskedMLP final : public Model {
public:
    MaskedMLP(const ModelSpec& spec, std::uint64_t seed);

    ad::Var forward(ad::Graph& g, const Tensor2D& x, const ForwardOptions& options) override;
    std::unique_ptr<Model> clone() const override { return std::make_unique<MaskedMLP>(*this); }
};

// Single-head attention encoder blocks over a frozen token/position embedding.
// The input vector is cut into seq_len tokens of input_dim / seq_len features.
class MiniTransformer final : public Model {
public:
    MiniTransformer(const ModelSpec& spec, std::uint64_t seed);

    ad::Var forward(ad::Graph& g, const Tensor2D& x, const ForwardOptions& options) override;
    std::unique_ptr<Model> clone() const override { return std::make_unique<MiniTransformer>(*this); }

    // Embedded tokens (model_dim x seq_len*batch) for an input batch.
    Tensor2D embed(const Tensor2D& x) const;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t seed);

// Column-softmax attention weights for one example: rows index keys,
// columns index queries, every column sums to 1.
Tensor2D attention_weights(const Tensor2D& queries, const Tensor2D& keys);

// Single-head attention applied per example over blocks of seq_len columns.
ad::Var attention(ad::Graph& g, ad::Var queries, ad::Var keys, ad::Var values, std::size_t seq_len);

// Mean over each block of seq_len columns: (d x seq_len*B) -> (d x B).
ad::Var mean_pool_tokens(ad::Graph& g, ad::Var h, std::size_t seq_len);

struct LayerSparsity {
    std::string layer;
    std::size_t kept = 0;
    std::size_t total = 0;
};

// Kept = strictly nonzero mask entries. Biases, head and embeddings excluded.
// With an l0 pruner the deterministic test mask is counted.
std::vector<LayerSparsity> remaining_weights_report(const Model& model, const PrunerConfig* pruner = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian layout, documented in docs/checkpoint_format.md.

struct Checkpoint {
    ModelSpec spec;
    bool has_pruner = false;
    PrunerVariant pruner_variant = PrunerVariant::movement;
    HardConcreteParams hard_concrete{};
    std::int64_t step = 0;
    SparsitySchedule schedule{};
    std::vector<std::pair<std::string, Tensor2D>> tensors;
};

Checkpoint make_checkpoint(const Model& model, std::int64_t step = 0,
                           const PrunerConfig* pruner = nullptr,
                           const SparsitySchedule* schedule = nullptr);

// Copies every tensor of the checkpoint into `model`. Throws
// ShapeMismatchError when the spec, a name or a shape disagrees.
void load_into(Model& model, const Checkpoint& checkpoint);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace prunelab
