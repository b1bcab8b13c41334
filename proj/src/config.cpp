#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "prunelab/errors.hpp"
#include "prunelab/experiment.hpp"

namespace prunelab {
namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, const char* what) {
    T v{};
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) {
        throw ConfigError("expected " + std::string(what) + ", got '" + std::string(text) + "'");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) throw ConfigError("expected a finite number, got '" + std::string(text) + "'");
    }
    return v;
}

double to_double(std::string_view t) { return parse_number<double>(t, "a number"); }
std::int64_t to_int(std::string_view t) { return parse_number<std::int64_t>(t, "an integer"); }
std::uint64_t to_uint(std::string_view t) { return parse_number<std::uint64_t>(t, "a nonnegative integer"); }
std::size_t to_size(std::string_view t) { return parse_number<std::size_t>(t, "a nonnegative integer"); }

bool to_bool(std::string_view t) {
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw ConfigError("expected true or false, got '" + std::string(t) + "'");
}

std::vector<std::string_view> split_list(std::string_view t) {
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = t.find(',');
        const auto item = trim(t.substr(0, comma));
        if (item.empty()) throw ConfigError("empty item in list");
        out.push_back(item);
        if (comma == std::string_view::npos) break;
        t.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F fmt) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) s += ',';
        s += fmt(items[i]);
    }
    return s;
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
OptimizerKind parse_optimizer(std::string_view t) {
    if (t == "sgd") return OptimizerKind::sgd;
    if (t == "adam") return OptimizerKind::adam;
    throw ConfigError("optimizer must be sgd or adam, got '" + std::string(t) + "'");
}

std::string_view to_string(DistillAxis d) {
    switch (d) {
        case DistillAxis::off: return "off";
        case DistillAxis::on: return "on";
        case DistillAxis::both: return "both";
    }
    return "off";
}
DistillAxis parse_distill_axis(std::string_view t) {
    if (t == "off") return DistillAxis::off;
    if (t == "on") return DistillAxis::on;
    if (t == "both") return DistillAxis::both;
    throw ConfigError("sweep_distill must be off, on or both, got '" + std::string(t) + "'");
}

std::string fmt_double(double v) { return format_double(v); }
std::string fmt_int(std::int64_t v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct KeySpec {
    const char* key;
    const char* description;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define PL_DOUBLE(name, field, doc)                                                     \
    KeySpec{name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = to_double(v); }, \
            [](const ExperimentConfig& c) { return fmt_double(c.field); }}
#define PL_INT(name, field, doc)                                                     \
    KeySpec{name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = to_int(v); }, \
            [](const ExperimentConfig& c) { return fmt_int(static_cast<std::int64_t>(c.field)); }}
#define PL_SIZE(name, field, doc)                                                     \
    KeySpec{name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = to_size(v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.field); }}
#define PL_PATH(name, field, doc)                                                               \
    KeySpec{name, doc, [](ExperimentConfig& c, std::string_view v) { c.field = std::string(v); }, \
            [](const ExperimentConfig& c) { return c.field.string(); }}

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = {
        KeySpec{"seed", "Seed for task generation, initialization, batching and noise",
                [](ExperimentConfig& c, std::string_view v) { c.seed = to_uint(v); },
                [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        PL_PATH("out", out_dir, "Output directory"),

        PL_PATH("task_dir", task_dir, "Task CSV directory (empty: <out>/tasks)"),
        PL_SIZE("task_dim", task.dim, "Feature dimension"),
        PL_SIZE("task_classes", task.classes, "Number of classes"),
        PL_SIZE("task_train_size", task.train_size, "Training examples per task"),
        PL_SIZE("task_eval_size", task.eval_size, "Evaluation examples per task"),
        PL_DOUBLE("task_mean_scale", task.mean_scale, "Scale of the standard normal class means"),
        PL_DOUBLE("task_target_mean_noise", task.target_mean_noise, "Jitter added to rotated target means"),
        PL_DOUBLE("task_sample_noise", task.sample_noise, "Standard deviation of per-example noise"),
        PL_DOUBLE("task_rotation_strength", task.rotation_strength,
                  "0: Haar rotation; > 0: Cayley rotation of that strength"),

        KeySpec{"model", "mlp or mini_transformer",
                [](ExperimentConfig& c, std::string_view v) { c.model.kind = parse_model_kind(v); },
                [](const ExperimentConfig& c) { return std::string(to_string(c.model.kind)); }},
        PL_SIZE("hidden_width", model.hidden_width, "MLP hidden width"),
        PL_SIZE("hidden_layers", model.hidden_layers, "MLP hidden layers"),
        PL_SIZE("model_dim", model.model_dim, "Transformer model dimension"),
        PL_SIZE("seq_len", model.seq_len, "Transformer tokens per example (must divide task_dim)"),
        PL_SIZE("blocks", model.blocks, "Transformer blocks"),

        PL_INT("pretrain_steps", pretrain_steps, "Dense training steps on the source task"),
        PL_DOUBLE("pretrain_lr", pretrain_lr, "Learning rate for pretraining"),
        PL_PATH("resume", resume, "Checkpoint to continue pretraining from (empty: fresh init)"),
        PL_PATH("pretrained", pretrained, "Pretrained checkpoint for fine-pruning (empty: <out>/pretrain/model.ckpt)"),

        KeySpec{"pruner", "magnitude, movement, soft_movement or l0",
                [](ExperimentConfig& c, std::string_view v) { c.pruner.variant = parse_pruner_variant(v); },
                [](const ExperimentConfig& c) { return std::string(to_string(c.pruner.variant)); }},
        KeySpec{"locality", "local or global Top_v selection",
                [](ExperimentConfig& c, std::string_view v) { c.pruner.locality = parse_locality(v); },
                [](const ExperimentConfig& c) { return std::string(to_string(c.pruner.locality)); }},
        PL_DOUBLE("sparsity_initial", sparsity_initial, "Pruned fraction at the start of the schedule"),
        PL_DOUBLE("sparsity_final", sparsity_final, "Pruned fraction at the end of the schedule"),
        PL_INT("warmup_steps", warmup_steps, "Schedule warm-up steps (-1: 5% of steps)"),
        PL_INT("cooldown_steps", cooldown_steps, "Schedule cool-down steps (-1: 20% of steps)"),
        PL_DOUBLE("tau", pruner.tau, "Soft movement threshold"),
        PL_DOUBLE("lambda_mvp", pruner.lambda_mvp, "Soft movement regularizer weight"),
        PL_DOUBLE("lambda_l0", pruner.lambda_l0, "Expected-L0 penalty weight"),
        PL_INT("lambda_warmup_steps", pruner.lambda_warmup_steps, "Linear ramp of lambda (0: constant)"),
        KeySpec{"score_init", "Initial score for movement variants (empty: 0, or tau + 0.001 for soft movement)",
                [](ExperimentConfig& c, std::string_view v) {
                    if (v.empty()) {
                        c.pruner.score_init.reset();
                    } else {
                        c.pruner.score_init = to_double(v);
                    }
                },
                [](const ExperimentConfig& c) {
                    return c.pruner.score_init ? fmt_double(*c.pruner.score_init) : std::string();
                }},
        KeySpec{"score_lr", "Score learning rate for movement variants (plain SGD)",
                [](ExperimentConfig& c, std::string_view v) { c.pruner.score_optimizer.lr = to_double(v); },
                [](const ExperimentConfig& c) { return fmt_double(c.pruner.score_optimizer.lr); }},
        PL_DOUBLE("l0_score_init", l0_score_init, "Initial l0 score (3 opens every gate)"),
        PL_DOUBLE("l0_score_lr", l0_score_lr, "Score learning rate for l0"),
        PL_DOUBLE("hc_beta", pruner.hard_concrete.b, "Hard-concrete temperature"),
        PL_DOUBLE("hc_left", pruner.hard_concrete.l, "Hard-concrete stretch left end (< 0)"),
        PL_DOUBLE("hc_right", pruner.hard_concrete.r, "Hard-concrete stretch right end (> 1)"),

        PL_INT("steps", optimizer.steps, "Fine-pruning steps"),
        PL_DOUBLE("lr_weights", optimizer.lr_weights, "Weight learning rate"),
        PL_DOUBLE("momentum", optimizer.momentum, "SGD momentum for weights"),
        KeySpec{"optimizer", "Weight optimizer: sgd or adam",
                [](ExperimentConfig& c, std::string_view v) { c.optimizer.kind = parse_optimizer(v); },
                [](const ExperimentConfig& c) { return std::string(to_string(c.optimizer.kind)); }},
        PL_SIZE("batch_size", optimizer.batch_size, "Examples per step"),
        PL_INT("log_every", optimizer.log_every, "Metrics row cadence in steps (the final step is always logged)"),

        KeySpec{"distill", "Add the distillation term",
                [](ExperimentConfig& c, std::string_view v) { c.distill.enabled = to_bool(v); },
                [](const ExperimentConfig& c) { return fmt_bool(c.distill.enabled); }},
        PL_DOUBLE("lambda_kd", distill.lambda_kd, "Distillation weight in [0,1]"),
        PL_DOUBLE("kd_temperature", distill.temperature, "Distillation temperature"),
        KeySpec{"teacher", "Teacher checkpoint (empty: <out>/teacher/model.ckpt, trained when missing)",
                [](ExperimentConfig& c, std::string_view v) { c.distill.teacher_path = std::string(v); },
                [](const ExperimentConfig& c) { return c.distill.teacher_path; }},
        PL_INT("teacher_steps", teacher_steps, "Dense fine-tuning steps when training the teacher"),

        KeySpec{"sweep_pruners", "Comma-separated pruner axis",
                [](ExperimentConfig& c, std::string_view v) {
                    c.sweep.pruners.clear();
                    for (auto item : split_list(v)) c.sweep.pruners.push_back(parse_pruner_variant(item));
                },
                [](const ExperimentConfig& c) {
                    return join(c.sweep.pruners, [](PrunerVariant p) { return std::string(to_string(p)); });
                }},
        KeySpec{"sweep_kept", "Comma-separated kept-fraction axis",
                [](ExperimentConfig& c, std::string_view v) {
                    c.sweep.kept.clear();
                    for (auto item : split_list(v)) c.sweep.kept.push_back(to_double(item));
                },
                [](const ExperimentConfig& c) { return join(c.sweep.kept, fmt_double); }},
        KeySpec{"sweep_seeds", "Comma-separated seed axis",
                [](ExperimentConfig& c, std::string_view v) {
                    c.sweep.seeds.clear();
                    for (auto item : split_list(v)) c.sweep.seeds.push_back(to_uint(item));
                },
                [](const ExperimentConfig& c) {
                    return join(c.sweep.seeds, [](std::uint64_t s) { return std::to_string(s); });
                }},
        KeySpec{"sweep_distill", "Distillation axis: off, on or both",
                [](ExperimentConfig& c, std::string_view v) { c.sweep.distill = parse_distill_axis(v); },
                [](const ExperimentConfig& c) { return std::string(to_string(c.sweep.distill)); }},
        KeySpec{"sweep_calibrate", "Calibrate lambda so soft movement and l0 cells hit the kept target",
                [](ExperimentConfig& c, std::string_view v) { c.sweep.calibrate = to_bool(v); },
                [](const ExperimentConfig& c) { return fmt_bool(c.sweep.calibrate); }},
        PL_INT("sweep_calibration_probes", sweep.calibration_probes, "Bisection probes per calibration"),
        PL_DOUBLE("sweep_mvp_lambda_lo", sweep.mvp_lambda_lo, "Lower end of the lambda_mvp search"),
        PL_DOUBLE("sweep_mvp_lambda_hi", sweep.mvp_lambda_hi, "Upper end of the lambda_mvp search"),
        PL_DOUBLE("sweep_l0_lambda_lo", sweep.l0_lambda_lo, "Lower end of the lambda_l0 search"),
        PL_DOUBLE("sweep_l0_lambda_hi", sweep.l0_lambda_hi, "Upper end of the lambda_l0 search"),
    };
    return table;
}

#undef PL_DOUBLE
#undef PL_INT
#undef PL_SIZE
#undef PL_PATH

}  // namespace

const std::vector<ConfigKeyDoc>& config_keys() {
    static const std::vector<ConfigKeyDoc> docs = [] {
        const ExperimentConfig defaults;
        std::vector<ConfigKeyDoc> out;
        for (const auto& k : key_table()) out.push_back({k.key, k.get(defaults), k.description});
        return out;
    }();
    return docs;
}

std::string dump_config(const ExperimentConfig& config) {
    std::string s;
    for (const auto& k : key_table()) s += std::string(k.key) + "=" + k.get(config) + "\n";
    return s;
}

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
    ExperimentConfig config;
    std::set<std::string, std::less<>> seen;
    std::size_t lineno = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++lineno;
        const std::string where = std::string(origin) + ":" + std::to_string(lineno) + ": ";
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = key_table();
        const auto it = std::find_if(table.begin(), table.end(), [&](const KeySpec& k) { return k.key == key; });
        if (it == table.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError(where + "key '" + std::string(key) + "' given twice");
        }
        try {
            it->set(config, value);
        } catch (const Error& e) {
            throw ConfigError(where + std::string(key) + ": " + e.what());
        }
    }
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.string());
}

}  // namespace prunelab
