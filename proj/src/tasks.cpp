#include "prunelab/tasks.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "prunelab/errors.hpp"

namespace prunelab {

Tensor2D Dataset::columns(std::span<const std::size_t> indices) const {
    Tensor2D out(dim(), indices.size());
    for (std::size_t c = 0; c < indices.size(); ++c) {
        const std::size_t row = indices[c];
        for (std::size_t f = 0; f < dim(); ++f) out(f, c) = features(row, f);
    }
    return out;
}

Tensor2D Dataset::columns(std::size_t first, std::size_t count) const {
    Tensor2D out(dim(), count);
    for (std::size_t c = 0; c < count; ++c) {
        for (std::size_t f = 0; f < dim(); ++f) out(f, c) = features(first + c, f);
    }
    return out;
}

Tensor2D random_rotation(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    Tensor2D out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

Tensor2D random_rotation_near_identity(std::size_t n, double strength, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
    }
    const Eigen::MatrixXd a = (strength / (2.0 * std::sqrt(static_cast<double>(n)))) * (g - g.transpose());
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(g.rows(), g.cols());
    // Cayley transform of a skew-symmetric matrix: orthogonal with det +1.
    const Eigen::MatrixXd q = (eye + a).partialPivLu().solve(eye - a);
    Tensor2D out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

namespace {

Dataset sample_mixture(const Tensor2D& means, std::size_t n, double noise, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(means.rows()) - 1);
    std::normal_distribution<double> normal(0.0, noise);
    Dataset ds{Tensor2D(n, means.cols()), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = pick(rng);
        ds.labels[i] = c;
        for (std::size_t f = 0; f < means.cols(); ++f) {
            ds.features(i, f) = means(static_cast<std::size_t>(c), f) + normal(rng);
        }
    }
    return ds;
}

}  // namespace

TaskPair generate_tasks(const TaskSpec& spec) {
    if (spec.dim == 0 || spec.classes < 2 || spec.train_size == 0 || spec.eval_size == 0) {
        throw ConfigError("task spec needs dim > 0, classes >= 2 and nonempty splits");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Tensor2D source_means(spec.classes, spec.dim);
    for (std::size_t i = 0; i < source_means.size(); ++i) source_means[i] = spec.mean_scale * normal(rng);

    TaskPair out;
    const std::uint64_t rotation_seed = rng();
    out.rotation = spec.rotation_strength > 0.0
                       ? random_rotation_near_identity(spec.dim, spec.rotation_strength, rotation_seed)
                       : random_rotation(spec.dim, rotation_seed);
    Tensor2D target_means(spec.classes, spec.dim);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t i = 0; i < spec.dim; ++i) {
            double v = 0.0;
            for (std::size_t j = 0; j < spec.dim; ++j) v += out.rotation(i, j) * source_means(c, j);
            target_means(c, i) = v + spec.target_mean_noise * normal(rng);
        }
    }

    out.source_train = sample_mixture(source_means, spec.train_size, spec.sample_noise, rng);
    out.source_eval = sample_mixture(source_means, spec.eval_size, spec.sample_noise, rng);
    out.target_train = sample_mixture(target_means, spec.train_size, spec.sample_noise, rng);
    out.target_eval = sample_mixture(target_means, spec.eval_size, spec.sample_noise, rng);
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (std::size_t f = 0; f < ds.dim(); ++f) out << 'f' << f << ',';
    out << "label\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t f = 0; f < ds.dim(); ++f) out << format_double(ds.features(i, f)) << ',';
        out << ds.labels[i] << '\n';
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open task file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("task file '" + path.string() + "' is empty");
    std::size_t cols = 1;
    for (char ch : line) cols += ch == ',' ? 1 : 0;
    if (cols < 2) throw ParseError("task file '" + path.string() + "' has no feature columns");
    const std::size_t dim = cols - 1;

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (std::size_t f = 0; f < dim; ++f) {
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{} || next == end || *next != ',') {
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad feature value");
            }
            values.push_back(v);
            p = next + 1;
        }
        int label = 0;
        auto [next, ec] = std::from_chars(p, end, label);
        if (ec != std::errc{} || next != end) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad label");
        }
        labels.push_back(label);
    }
    const std::size_t n = labels.size();
    return Dataset{Tensor2D(n, dim, std::move(values)), std::move(labels)};
}

void write_task_files(const TaskPair& tasks, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    write_dataset_csv(tasks.source_train, dir / "source_train.csv");
    write_dataset_csv(tasks.source_eval, dir / "source_eval.csv");
    write_dataset_csv(tasks.target_train, dir / "target_train.csv");
    write_dataset_csv(tasks.target_eval, dir / "target_eval.csv");
}

}  // namespace prunelab
