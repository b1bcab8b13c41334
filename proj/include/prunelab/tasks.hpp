#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

// One example per row of `features`.
struct Dataset {
    Tensor2D features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    // Selected examples as a dim x batch column matrix.
    Tensor2D columns(std::span<const std::size_t> indices) const;
    Tensor2D columns(std::size_t first, std::size_t count) const;
};

// Gaussian-mixture transfer pair. Source class means are standard normal
// draws times `mean_scale`; target means are the source means under a fixed
// random rotation plus N(0, target_mean_noise^2) jitter. The rotation is
// Haar-distributed when rotation_strength <= 0, otherwise a Cayley transform
// whose angles grow with rotation_strength. Samples add
// isotropic N(0, sample_noise^2) noise; labels are uniform over classes.
struct TaskSpec {
    std::uint64_t seed = 0;
    std::size_t dim = 32;
    std::size_t classes = 8;
    std::size_t train_size = 4096;
    std::size_t eval_size = 1024;
    double mean_scale = 3.0;
    double target_mean_noise = 0.5;
    double sample_noise = 1.0;
    double rotation_strength = 0.0;
};

struct TaskPair {
    Dataset source_train;
    Dataset source_eval;
    Dataset target_train;
    Dataset target_eval;
    Tensor2D rotation;  // dim x dim, orthogonal
};

TaskPair generate_tasks(const TaskSpec& spec);

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
Tensor2D random_rotation(std::size_t n, std::uint64_t seed);

// Header f0..f{d-1},label; doubles in shortest round-trip form.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

// Orthogonal (I + A)^-1 (I - A) for A = strength * (G - G^T) / (2 sqrt(n)),
// G standard normal: a random rotation close to the identity for small strength.
Tensor2D random_rotation_near_identity(std::size_t n, double strength, std::uint64_t seed);

// Writes source_train.csv, source_eval.csv, target_train.csv, target_eval.csv.
void write_task_files(const TaskPair& tasks, const std::filesystem::path& dir);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace prunelab
