#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "prunelab/errors.hpp"
#include "prunelab/model.hpp"

namespace prunelab {
namespace {

constexpr char kMagic[8] = {'P', 'R', 'U', 'N', 'E', 'L', 'A', 'B'};
constexpr std::uint8_t kVersion = 1;

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    bool at_end() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const Model& model, std::int64_t step, const PrunerConfig* pruner,
                           const SparsitySchedule* schedule) {
    Checkpoint ck;
    ck.spec = model.spec();
    ck.step = step;
    if (pruner) {
        ck.has_pruner = true;
        ck.pruner_variant = pruner->variant;
        ck.hard_concrete = pruner->hard_concrete;
    }
    if (schedule) ck.schedule = *schedule;
    for (const auto* layer : model.prunable_layers()) {
        ck.tensors.emplace_back(layer->weight_param(), layer->weights);
        ck.tensors.emplace_back(layer->score_param(), layer->scores);
        ck.tensors.emplace_back(layer->name + ".M", layer->mask);
    }
    for (const auto& p : model.dense_params()) ck.tensors.emplace_back(p.name, p.value);
    return ck;
}

void load_into(Model& model, const Checkpoint& ck) {
    if (!(ck.spec == model.spec())) {
        throw ShapeMismatchError("checkpoint holds a " + std::string(to_string(ck.spec.kind)) +
                                 " model that does not match the requested " +
                                 std::string(to_string(model.spec().kind)) + " configuration");
    }
    std::size_t expected = 0;
    auto assign = [&](const std::string& name, Tensor2D& dst) {
        ++expected;
        for (const auto& [n, t] : ck.tensors) {
            if (n != name) continue;
            if (!t.same_shape(dst)) {
                throw ShapeMismatchError("checkpoint tensor '" + name + "' is " + t.shape_string() +
                                         ", model expects " + dst.shape_string());
            }
            dst = t;
            return;
        }
        throw ShapeMismatchError("checkpoint lacks tensor '" + name + "'");
    };
    for (auto* layer : model.prunable_layers()) {
        assign(layer->weight_param(), layer->weights);
        assign(layer->score_param(), layer->scores);
        assign(layer->name + ".M", layer->mask);
        layer->score_gate = Tensor2D{};
    }
    for (auto& p : model.dense_params()) assign(p.name, p.value);
    if (expected != ck.tensors.size()) {
        throw ShapeMismatchError("checkpoint carries " + std::to_string(ck.tensors.size()) +
                                 " tensors, model has " + std::to_string(expected));
    }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck) {
    auto model = make_model(ck.spec, 0);
    load_into(*model, ck);
    return model;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(ck.spec.kind));
    w.u8(ck.has_pruner ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(ck.pruner_variant));
    w.f64(ck.hard_concrete.b);
    w.f64(ck.hard_concrete.l);
    w.f64(ck.hard_concrete.r);
    w.i64(ck.step);
    w.f64(ck.schedule.initial);
    w.f64(ck.schedule.final);
    w.i64(ck.schedule.warmup);
    w.i64(ck.schedule.cooldown);
    w.i64(ck.schedule.total);
    const std::uint64_t dims[] = {ck.spec.input_dim, ck.spec.num_classes, ck.spec.hidden_width,
                                  ck.spec.hidden_layers, ck.spec.model_dim, ck.spec.seq_len,
                                  ck.spec.blocks};
    w.u32(static_cast<std::uint32_t>(std::size(dims)));
    for (auto d : dims) w.u64(d);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(t.rows()));
        w.u32(static_cast<std::uint32_t>(t.cols()));
        for (double v : t.values()) w.f64(v);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError("not a checkpoint file (bad magic)");
    const auto version = r.u8();
    if (version != kVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                           std::to_string(kVersion) + ")");
    }
    Checkpoint ck;
    const auto kind = r.u8();
    if (kind > 1) throw ParseError("checkpoint: unknown model kind " + std::to_string(kind));
    ck.spec.kind = static_cast<ModelKind>(kind);
    ck.has_pruner = r.u8() != 0;
    const auto variant = r.u8();
    if (variant > 3) throw ParseError("checkpoint: unknown pruner variant " + std::to_string(variant));
    ck.pruner_variant = static_cast<PrunerVariant>(variant);
    ck.hard_concrete.b = r.f64();
    ck.hard_concrete.l = r.f64();
    ck.hard_concrete.r = r.f64();
    ck.step = r.i64();
    ck.schedule.initial = r.f64();
    ck.schedule.final = r.f64();
    ck.schedule.warmup = r.i64();
    ck.schedule.cooldown = r.i64();
    ck.schedule.total = r.i64();
    const auto ndims = r.u32();
    if (ndims != 7) throw ParseError("checkpoint: expected 7 model dimensions, found " + std::to_string(ndims));
    std::size_t* dims[] = {&ck.spec.input_dim, &ck.spec.num_classes, &ck.spec.hidden_width,
                           &ck.spec.hidden_layers, &ck.spec.model_dim, &ck.spec.seq_len, &ck.spec.blocks};
    for (auto* d : dims) *d = static_cast<std::size_t>(r.u64());
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32();
        if (len > bytes.size()) throw ParseError("checkpoint: corrupt tensor name length");
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        const std::size_t rows = r.u32();
        const std::size_t cols = r.u32();
        if (rows * cols > bytes.size() / 8) throw ParseError("checkpoint truncated in tensor '" + name + "'");
        Tensor2D t(rows, cols);
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = r.f64();
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.at_end()) throw ParseError("checkpoint: trailing bytes after last tensor");
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace prunelab
