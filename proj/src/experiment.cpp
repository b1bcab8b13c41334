#include "prunelab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "prunelab/errors.hpp"

namespace prunelab {

namespace fs = std::filesystem;

// --- config helpers ---------------------------------------------------------------

ExperimentConfig::ExperimentConfig() {
    task.sample_noise = 3.5;
    pruner.lambda_mvp = 1e-3;
    pruner.lambda_l0 = 0.02;
}

TaskSpec ExperimentConfig::task_spec(std::uint64_t run_seed) const {
    TaskSpec t = task;
    t.seed = run_seed;
    return t;
}

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec m = model;
    m.input_dim = task.dim;
    m.num_classes = task.classes;
    return m;
}

fs::path ExperimentConfig::resolved_task_dir() const { return task_dir.empty() ? out_dir / "tasks" : task_dir; }

fs::path ExperimentConfig::resolved_pretrained() const {
    return pretrained.empty() ? out_dir / "pretrain" / "model.ckpt" : pretrained;
}

fs::path ExperimentConfig::resolved_teacher() const {
    return distill.teacher_path.empty() ? out_dir / "teacher" / "model.ckpt" : fs::path(distill.teacher_path);
}

PrunerConfig ExperimentConfig::pruner_for(PrunerVariant variant) const {
    PrunerConfig p = pruner;
    p.variant = variant;
    if (variant == PrunerVariant::l0) {
        p.score_init = l0_score_init;
        p.score_optimizer.lr = l0_score_lr;
    }
    return p;
}

SparsitySchedule ExperimentConfig::schedule_for(double final_pruned) const {
    const std::int64_t total = optimizer.steps;
    SparsitySchedule s;
    s.initial = std::min(sparsity_initial, final_pruned);
    s.final = final_pruned;
    s.total = total;
    s.warmup = warmup_steps < 0 ? total / 20 : warmup_steps;
    s.cooldown = cooldown_steps < 0 ? total / 5 : cooldown_steps;
    return s;
}

OptimizerConfig ExperimentConfig::pretrain_optimizer() const {
    OptimizerConfig o = optimizer;
    o.steps = pretrain_steps;
    o.lr_weights = pretrain_lr;
    o.seed = seed;
    return o;
}

void ExperimentConfig::validate() const {
    if (task.dim == 0 || task.classes < 2 || task.train_size == 0 || task.eval_size == 0) {
        throw ConfigError("task needs task_dim > 0, task_classes >= 2 and nonempty splits");
    }
    if (!(task.sample_noise >= 0.0) || !(task.mean_scale >= 0.0) || !(task.target_mean_noise >= 0.0)) {
        throw ConfigError("task scales must be nonnegative");
    }
    model_spec().validate();
    optimizer.validate();
    distill.validate();
    for (auto v : {PrunerVariant::magnitude, PrunerVariant::movement, PrunerVariant::soft_movement,
                   PrunerVariant::l0}) {
        pruner_for(v).validate();
    }
    if (!(sparsity_final >= 0.0 && sparsity_final <= 1.0) || !(sparsity_initial >= 0.0 && sparsity_initial <= 1.0)) {
        throw ConfigError("sparsity_initial and sparsity_final must lie in [0,1]");
    }
    if (sparsity_initial > sparsity_final) throw ConfigError("sparsity_initial must not exceed sparsity_final");
    schedule_for(sparsity_final).validate();
    if (pretrain_steps < 0 || teacher_steps < 0) throw ConfigError("step counts must be nonnegative");
    if (!(pretrain_lr > 0.0)) throw ConfigError("pretrain_lr must be positive");
    if (sweep.pruners.empty() || sweep.kept.empty() || sweep.seeds.empty()) {
        throw ConfigError("sweep axes must be nonempty");
    }
    for (double k : sweep.kept) {
        if (!(k > 0.0 && k <= 1.0)) throw ConfigError("sweep_kept entries must lie in (0,1]");
    }
    if (sweep.calibration_probes < 1) throw ConfigError("sweep_calibration_probes must be at least 1");
    if (!(sweep.mvp_lambda_lo > 0.0 && sweep.mvp_lambda_lo < sweep.mvp_lambda_hi) ||
        !(sweep.l0_lambda_lo > 0.0 && sweep.l0_lambda_lo < sweep.l0_lambda_hi)) {
        throw ConfigError("sweep lambda ranges need 0 < lo < hi");
    }
}

// --- files ------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double field_double(const std::string& s, const fs::path& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
}

std::size_t field_size(const std::string& s, const fs::path& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used == s.size()) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad index '" + s + "'");
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::string>& layers,
                       const fs::path& path) {
    std::string s = "step,kept_fraction,train_loss,eval_accuracy,regularizer_value";
    for (const auto& name : layers) s += ",kept_" + name;
    s += '\n';
    for (const auto& r : rows) {
        s += std::to_string(r.step) + ',' + format_double(r.kept_fraction) + ',' + format_double(r.train_loss) +
             ',' + format_double(r.eval_accuracy) + ',' + format_double(r.regularizer_value);
        for (std::size_t k : r.layer_kept) s += ',' + std::to_string(k);
        s += '\n';
    }
    write_text(path, s);
}

void write_scatter_csv(const std::vector<ScatterRow>& rows, const fs::path& path) {
    std::string s = "layer,i,j,w_pretrained,w_final,score_final,pruned\n";
    for (const auto& r : rows) {
        s += r.layer + ',' + std::to_string(r.i) + ',' + std::to_string(r.j) + ',' + format_double(r.w_pretrained) +
             ',' + format_double(r.w_final) + ',' + format_double(r.score_final) + ',' + (r.pruned ? "1" : "0") +
             '\n';
    }
    write_text(path, s);
}

std::vector<ScatterRow> read_scatter_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open scatter file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "layer,i,j,w_pretrained,w_final,score_final,pruned") {
        throw ParseError("scatter file '" + path.string() + "' has an unexpected header");
    }
    std::vector<ScatterRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 7 || (f[6] != "0" && f[6] != "1")) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed scatter row");
        }
        rows.push_back({f[0], field_size(f[1], path, lineno), field_size(f[2], path, lineno),
                        field_double(f[3], path, lineno), field_double(f[4], path, lineno),
                        field_double(f[5], path, lineno), f[6] == "1"});
    }
    return rows;
}

void write_layer_sparsity_csv(const std::vector<LayerSparsity>& rows, const fs::path& path) {
    std::string s = "layer,kept,total,kept_fraction\n";
    for (const auto& r : rows) {
        const double frac = r.total == 0 ? 1.0 : static_cast<double>(r.kept) / static_cast<double>(r.total);
        s += r.layer + ',' + std::to_string(r.kept) + ',' + std::to_string(r.total) + ',' + format_double(frac) +
             '\n';
    }
    write_text(path, s);
}

// --- scatter analysis ---------------------------------------------------------------

std::vector<ScatterRow> scatter_rows(const Model& pretrained, const Model& final_model, const PrunerConfig& pruner) {
    auto final_copy = final_model.clone();
    auto layers = final_copy->prunable_layers();
    const auto before = pretrained.prunable_layers();
    if (before.size() != layers.size()) throw ShapeMismatchError("scatter: models have different layer counts");

    std::vector<Mask> masks;
    if (pruner.uses_topv()) {
        for (const auto* layer : layers) masks.push_back(layer->mask);
    } else {
        masks = compute_mask(layers, pruner, std::nullopt, Mode::eval);
    }

    std::vector<ScatterRow> rows;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const MaskedLayer& a = *before[li];
        const MaskedLayer& b = *layers[li];
        if (!a.weights.same_shape(b.weights)) throw ShapeMismatchError("scatter: layer '" + b.name + "' shape differs");
        for (std::size_t i = 0; i < b.weights.rows(); ++i) {
            for (std::size_t j = 0; j < b.weights.cols(); ++j) {
                rows.push_back({b.name, i, j, a.weights(i, j), b.weights(i, j), b.scores(i, j),
                                masks[li](i, j) == 0.0});
            }
        }
    }
    return rows;
}

std::size_t scatter_ordering_violations(const std::vector<ScatterRow>& rows, PrunerVariant variant,
                                        Locality locality) {
    auto key = [&](const ScatterRow& r) {
        return variant == PrunerVariant::magnitude ? std::abs(r.w_final) : r.score_final;
    };
    struct Scope {
        double min_kept = INFINITY;
        std::vector<double> pruned;
    };
    std::map<std::string, Scope> scopes;
    for (const auto& r : rows) {
        Scope& sc = scopes[locality == Locality::global ? std::string() : r.layer];
        if (r.pruned) {
            sc.pruned.push_back(key(r));
        } else {
            sc.min_kept = std::min(sc.min_kept, key(r));
        }
    }
    std::size_t violations = 0;
    for (const auto& [name, sc] : scopes) {
        for (double p : sc.pruned) violations += p > sc.min_kept ? 1 : 0;
    }
    return violations;
}

VShapeReport v_shape_report(const std::vector<ScatterRow>& rows) {
    std::vector<const ScatterRow*> kept;
    for (const auto& r : rows) {
        if (!r.pruned) kept.push_back(&r);
    }
    VShapeReport rep;
    if (kept.empty()) return rep;
    std::stable_sort(kept.begin(), kept.end(),
                     [](const ScatterRow* a, const ScatterRow* b) { return a->score_final > b->score_final; });
    rep.top_decile = std::max<std::size_t>(1, kept.size() / 10);
    rep.min_abs_weight = INFINITY;
    for (std::size_t k = 0; k < rep.top_decile; ++k) {
        const ScatterRow& r = *kept[k];
        rep.min_abs_weight = std::min(rep.min_abs_weight, std::abs(r.w_final));
        const bool crossed = (r.w_pretrained > 0.0 && r.w_final <= 0.0) || (r.w_pretrained < 0.0 && r.w_final >= 0.0);
        rep.zero_crossings += crossed ? 1 : 0;
    }
    return rep;
}

// --- shared run pieces ----------------------------------------------------------------

namespace {

std::vector<std::string> layer_names(Model& model) {
    std::vector<std::string> names;
    for (const auto* layer : model.prunable_layers()) names.push_back(layer->name);
    return names;
}

Dataset load_split(const fs::path& dir, const char* name) { return read_dataset_csv(dir / name); }

// Dense fine-tuning of a copy of the pretrained model on the target task.
std::unique_ptr<Model> train_teacher(const ExperimentConfig& config, const Model& pretrained, const Dataset& train,
                                     const Dataset& eval, std::uint64_t seed) {
    auto teacher = pretrained.clone();
    OptimizerConfig opt = config.optimizer;
    opt.steps = config.teacher_steps;
    opt.seed = seed;
    opt.log_every = std::max<std::int64_t>(1, config.teacher_steps);
    pretrain(*teacher, train, eval, opt);
    return teacher;
}

FinePruneRequest make_request(const ExperimentConfig& config, PrunerVariant variant, double final_pruned,
                              std::uint64_t seed) {
    FinePruneRequest req;
    req.pruner = config.pruner_for(variant);
    req.schedule = config.schedule_for(req.pruner.uses_topv() ? final_pruned : 0.0);
    if (!req.pruner.uses_topv()) req.schedule.initial = 0.0;
    req.optimizer = config.optimizer;
    req.optimizer.seed = seed;
    req.distill = config.distill;
    return req;
}

// Runs fn(i) for i in [0, n) on `jobs` threads. Exceptions stay inside fn.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& t : workers) t.join();
}

}  // namespace

// --- sweep --------------------------------------------------------------------------

namespace {

struct SeedArtifacts {
    TaskPair tasks;
    std::unique_ptr<Model> pretrained;
    std::unique_ptr<Model> teacher;
    std::string error;
};

struct CellOutcome {
    double accuracy = 0.0;
    double kept = 0.0;
};

CellOutcome run_cell(const ExperimentConfig& config, const SeedArtifacts& art, PrunerVariant variant,
                     double kept_target, bool distill, std::optional<double> lambda, std::uint64_t seed) {
    FinePruneRequest req = make_request(config, variant, 1.0 - kept_target, seed);
    req.optimizer.log_every = std::max<std::int64_t>(1, req.optimizer.steps);
    req.distill.enabled = distill;
    req.teacher = distill ? art.teacher.get() : nullptr;
    if (lambda) {
        if (variant == PrunerVariant::soft_movement) req.pruner.lambda_mvp = *lambda;
        if (variant == PrunerVariant::l0) req.pruner.lambda_l0 = *lambda;
    }
    auto model = art.pretrained->clone();
    fineprune(*model, art.tasks.target_train, art.tasks.target_eval, req);
    return {evaluate(*model, art.tasks.target_eval, &req.pruner).accuracy, kept_fraction(*model, &req.pruner)};
}

bool lambda_driven(PrunerVariant v) { return v == PrunerVariant::soft_movement || v == PrunerVariant::l0; }

double lambda_of(const ExperimentConfig& config, PrunerVariant v) {
    if (v == PrunerVariant::soft_movement) return config.pruner.lambda_mvp;
    if (v == PrunerVariant::l0) return config.pruner.lambda_l0;
    return 0.0;
}

struct Calibration {
    double lambda = 0.0;
    CellOutcome best;  // outcome of the chosen probe on the first seed
    bool ok = false;
    std::string error;
};

// Kept fraction falls as lambda grows; bisect log(lambda) toward the target
// and keep the probe whose kept fraction is closest in log ratio.
Calibration calibrate(const ExperimentConfig& config, const SeedArtifacts& art, PrunerVariant variant,
                      double kept_target, std::uint64_t seed) {
    double lo = std::log(variant == PrunerVariant::l0 ? config.sweep.l0_lambda_lo : config.sweep.mvp_lambda_lo);
    double hi = std::log(variant == PrunerVariant::l0 ? config.sweep.l0_lambda_hi : config.sweep.mvp_lambda_hi);
    Calibration cal;
    double best_gap = INFINITY;
    for (int probe = 0; probe < config.sweep.calibration_probes; ++probe) {
        const double lambda = std::exp(0.5 * (lo + hi));
        const CellOutcome out = run_cell(config, art, variant, kept_target, false, lambda, seed);
        const double gap = out.kept > 0.0 ? std::abs(std::log(out.kept / kept_target)) : INFINITY;
        spdlog::debug("calibrate {} kept {}: lambda {} -> kept {}", to_string(variant), kept_target, lambda,
                      out.kept);
        if (!cal.ok || gap < best_gap) {
            best_gap = gap;
            cal = {lambda, out, true, {}};
        }
        if (out.kept > kept_target) {
            lo = std::log(lambda);
        } else {
            hi = std::log(lambda);
        }
    }
    return cal;
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& config, unsigned jobs) {
    config.validate();
    const auto& sw = config.sweep;
    std::vector<bool> distill_axis;
    if (sw.distill != DistillAxis::on) distill_axis.push_back(false);
    if (sw.distill != DistillAxis::off) distill_axis.push_back(true);
    const bool need_teacher = sw.distill != DistillAxis::off;

    // Phase 1: per-seed tasks, pretrained model and teacher.
    std::vector<SeedArtifacts> arts(sw.seeds.size());
    parallel_for(arts.size(), jobs, [&](std::size_t si) {
        const std::uint64_t seed = sw.seeds[si];
        try {
            SeedArtifacts& a = arts[si];
            a.tasks = generate_tasks(config.task_spec(seed));
            a.pretrained = make_model(config.model_spec(), seed);
            OptimizerConfig opt = config.pretrain_optimizer();
            opt.seed = seed;
            opt.log_every = std::max<std::int64_t>(1, opt.steps);
            pretrain(*a.pretrained, a.tasks.source_train, a.tasks.source_eval, opt);
            if (need_teacher) {
                a.teacher = train_teacher(config, *a.pretrained, a.tasks.target_train, a.tasks.target_eval, seed);
            }
        } catch (const std::exception& e) {
            arts[si].error = e.what();
        }
    });

    // Phase 2: lambda calibration on the first seed per (pruner, kept).
    std::map<std::pair<PrunerVariant, double>, Calibration> calib;
    if (sw.calibrate && arts.front().error.empty()) {
        std::vector<std::pair<PrunerVariant, double>> jobs_list;
        for (auto v : sw.pruners) {
            for (double k : sw.kept) {
                if (lambda_driven(v) && !calib.count({v, k})) {
                    calib[{v, k}] = {};
                    jobs_list.emplace_back(v, k);
                }
            }
        }
        std::mutex mu;
        parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
            const auto [v, k] = jobs_list[i];
            Calibration c;
            try {
                c = calibrate(config, arts.front(), v, k, sw.seeds.front());
            } catch (const std::exception& e) {
                c.ok = false;
                c.error = e.what();
            }
            std::lock_guard<std::mutex> lock(mu);
            calib[{v, k}] = c;
        });
    }

    // Phase 3: every remaining cell.
    SweepResult result;
    for (auto v : sw.pruners) {
        for (bool d : distill_axis) {
            for (double k : sw.kept) {
                for (auto s : sw.seeds) {
                    SweepCell cell;
                    cell.pruner = v;
                    cell.distill = d;
                    cell.kept_target = k;
                    cell.seed = s;
                    cell.lambda = lambda_of(config, v);
                    result.cells.push_back(cell);
                }
            }
        }
    }
    parallel_for(result.cells.size(), jobs, [&](std::size_t ci) {
        SweepCell& cell = result.cells[ci];
        const std::size_t si = static_cast<std::size_t>(
            std::find(sw.seeds.begin(), sw.seeds.end(), cell.seed) - sw.seeds.begin());
        try {
            if (!arts[si].error.empty()) throw Error("seed setup failed: " + arts[si].error);
            std::optional<double> lambda;
            if (lambda_driven(cell.pruner) && sw.calibrate) {
                const Calibration& c = calib.at({cell.pruner, cell.kept_target});
                if (!c.ok) throw Error("calibration failed: " + c.error);
                lambda = c.lambda;
                cell.lambda = c.lambda;
                if (!cell.distill && si == 0) {
                    cell.accuracy = c.best.accuracy;
                    cell.kept_achieved = c.best.kept;
                    return;
                }
            }
            const CellOutcome out =
                run_cell(config, arts[si], cell.pruner, cell.kept_target, cell.distill, lambda, cell.seed);
            cell.accuracy = out.accuracy;
            cell.kept_achieved = out.kept;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
            spdlog::error("sweep cell {} kept {} seed {} failed: {}", to_string(cell.pruner), cell.kept_target,
                          cell.seed, cell.error);
        }
    });
    return result;
}

void write_summary_csv(const SweepResult& result, const fs::path& path) {
    std::string s = "pruner,distill,kept_target,seed,accuracy,kept_achieved,lambda,status\n";
    struct Group {
        std::vector<double> acc, kept, lambda;
    };
    std::vector<std::tuple<PrunerVariant, bool, double>> order;
    std::map<std::tuple<PrunerVariant, bool, double>, Group> groups;
    for (const auto& c : result.cells) {
        s += std::string(to_string(c.pruner)) + ',' + (c.distill ? "on" : "off") + ',' + format_double(c.kept_target) +
             ',' + std::to_string(c.seed) + ',' + format_double(c.accuracy) + ',' + format_double(c.kept_achieved) +
             ',' + format_double(c.lambda) + ',' + (c.ok ? "ok" : "failed") + '\n';
        const auto key = std::make_tuple(c.pruner, c.distill, c.kept_target);
        if (!groups.count(key)) order.push_back(key);
        Group& g = groups[key];
        if (c.ok) {
            g.acc.push_back(c.accuracy);
            g.kept.push_back(c.kept_achieved);
            g.lambda.push_back(c.lambda);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return v.empty() ? 0.0 : m / static_cast<double>(v.size());
    };
    auto stddev = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean(v);
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    for (const auto& key : order) {
        const auto& [pruner, distill, kept] = key;
        const Group& g = groups.at(key);
        const std::string prefix =
            std::string(to_string(pruner)) + ',' + (distill ? "on" : "off") + ',' + format_double(kept) + ',';
        const std::string status = "n=" + std::to_string(g.acc.size());
        s += prefix + "mean," + format_double(mean(g.acc)) + ',' + format_double(mean(g.kept)) + ',' +
             format_double(mean(g.lambda)) + ',' + status + '\n';
        s += prefix + "std," + format_double(stddev(g.acc)) + ',' + format_double(stddev(g.kept)) + ',' +
             format_double(stddev(g.lambda)) + ',' + status + '\n';
    }
    write_text(path, s);
}

// --- commands -------------------------------------------------------------------------

void cmd_gen_tasks(const ExperimentConfig& config) {
    config.validate();
    const fs::path dir = config.resolved_task_dir();
    write_task_files(generate_tasks(config.task_spec(config.seed)), dir);
    spdlog::info("wrote tasks to {}", dir.string());
}

void cmd_pretrain(const ExperimentConfig& config) {
    config.validate();
    const fs::path dir = config.resolved_task_dir();
    const Dataset train = load_split(dir, "source_train.csv");
    const Dataset eval = load_split(dir, "source_eval.csv");

    std::unique_ptr<Model> model;
    std::int64_t start = 0;
    if (!config.resume.empty()) {
        const Checkpoint ck = load_checkpoint(config.resume);
        model = model_from_checkpoint(ck);
        if (!(model->spec() == config.model_spec())) {
            throw ShapeMismatchError("checkpoint '" + config.resume.string() + "' does not match the configured model");
        }
        start = ck.step;
    } else {
        model = make_model(config.model_spec(), config.seed);
    }

    const TrainResult res = pretrain(*model, train, eval, config.pretrain_optimizer());
    const fs::path out = config.out_dir / "pretrain";
    const Checkpoint ck = make_checkpoint(*model, start + config.pretrain_steps);
    std::error_code ec;
    fs::create_directories(out, ec);
    save_checkpoint(ck, out / "model.ckpt");
    write_metrics_csv(res.metrics, layer_names(*model), out / "metrics.csv");
    write_text(out / "config.txt", dump_config(config));
    spdlog::info("pretrain: source eval accuracy {:.4f}", evaluate(*model, eval).accuracy);
}

void cmd_fineprune(const ExperimentConfig& config) {
    config.validate();
    const fs::path dir = config.resolved_task_dir();
    const Dataset train = load_split(dir, "target_train.csv");
    const Dataset eval = load_split(dir, "target_eval.csv");
    const auto pretrained = model_from_checkpoint(load_checkpoint(config.resolved_pretrained()));
    if (!(pretrained->spec() == config.model_spec())) {
        throw ShapeMismatchError("pretrained checkpoint does not match the configured model");
    }

    FinePruneRequest req = make_request(config, config.pruner.variant, config.sparsity_final, config.seed);
    if (!req.pruner.uses_topv()) {
        req.schedule.initial = config.sparsity_initial;
        req.schedule.final = config.sparsity_final;
    }
    std::unique_ptr<Model> teacher;
    if (req.distill.enabled) {
        const fs::path tpath = config.resolved_teacher();
        if (fs::exists(tpath)) {
            teacher = model_from_checkpoint(load_checkpoint(tpath));
        } else if (config.distill.teacher_path.empty()) {
            spdlog::info("training teacher ({} steps) into {}", config.teacher_steps, tpath.string());
            teacher = train_teacher(config, *pretrained, train, eval, config.seed);
            std::error_code ec;
            fs::create_directories(tpath.parent_path(), ec);
            save_checkpoint(make_checkpoint(*teacher, config.teacher_steps), tpath);
        } else {
            throw IoError("teacher checkpoint '" + tpath.string() + "' not found");
        }
        if (!(teacher->spec().num_classes == pretrained->spec().num_classes)) {
            throw ShapeMismatchError("teacher predicts a different number of classes");
        }
        req.teacher = teacher.get();
    }

    auto model = pretrained->clone();
    const TrainResult res = fineprune(*model, train, eval, req);
    const fs::path out = config.out_dir / "fineprune";
    std::error_code ec;
    fs::create_directories(out, ec);
    save_checkpoint(make_checkpoint(*model, req.optimizer.steps, &req.pruner, &req.schedule), out / "model.ckpt");
    write_metrics_csv(res.metrics, layer_names(*model), out / "metrics.csv");
    write_scatter_csv(scatter_rows(*pretrained, *model, req.pruner), out / "scatter.csv");
    write_layer_sparsity_csv(remaining_weights_report(*model, &req.pruner), out / "layer_sparsity.csv");
    write_text(out / "config.txt", dump_config(config));
    spdlog::info("fineprune {}: target eval accuracy {:.4f}, kept {:.4f}", to_string(req.pruner.variant),
                 evaluate(*model, eval, &req.pruner).accuracy, kept_fraction(*model, &req.pruner));
}

void cmd_sweep(const ExperimentConfig& config, unsigned jobs) {
    const SweepResult res = run_sweep(config, jobs);
    write_summary_csv(res, config.out_dir / "summary.csv");
    write_text(config.out_dir / "sweep_config.txt", dump_config(config));
    const auto failed = std::count_if(res.cells.begin(), res.cells.end(), [](const SweepCell& c) { return !c.ok; });
    spdlog::info("sweep: {} cells, {} failed, summary in {}", res.cells.size(), failed,
                 (config.out_dir / "summary.csv").string());
}

bool cmd_verify(const ExperimentConfig& config) {
    const auto rows = oracles::run_suite({config.seed, 1.0});
    std::printf("%-36s %-13s %-14s %s\n", "oracle", "status", "metric", "threshold");
    for (const auto& r : rows) {
        std::printf("%-36s %-13s %-14s %s\n", r.oracle.c_str(), std::string(oracles::to_string(r.status)).c_str(),
                    format_double(r.metric).c_str(), format_double(r.threshold).c_str());
    }
    std::fflush(stdout);
    oracles::write_report_csv(rows, config.out_dir / "verify_report.csv");
    return oracles::all_passed(rows);
}

}  // namespace prunelab
