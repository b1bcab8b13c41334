#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "prunelab/autodiff.hpp"
#include "prunelab/tensor.hpp"

namespace testutil {

using prunelab::Tensor2D;

inline Tensor2D uniform(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor2D t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

inline Tensor2D normal(std::size_t r, std::size_t c, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    Tensor2D t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

// |a - n| / max(|a|, |n|, 1e-3)
inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

// Builds a scalar loss from one parameter node.
using LossBuilder = std::function<prunelab::ad::Var(prunelab::ad::Graph&, prunelab::ad::Var)>;

// Worst relative error between backward() and central differences of `build`.
inline double gradient_error(const LossBuilder& build, const Tensor2D& point, double h = 1e-6) {
    namespace ad = prunelab::ad;
    ad::Graph g;
    const ad::Var loss = build(g, g.parameter("p", point));
    const Tensor2D analytic = g.backward(loss).at("p");
    auto eval = [&](const Tensor2D& p) {
        ad::Graph q;
        return q.value(build(q, q.constant(p)))(0, 0);
    };
    double worst = 0.0;
    Tensor2D probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + h;
        const double up = eval(probe);
        probe[i] = point[i] - h;
        const double down = eval(probe);
        probe[i] = point[i];
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

// sum(out .* R) for a fixed random R, so every output entry gets a distinct upstream gradient.
inline prunelab::ad::Var weighted_sum(prunelab::ad::Graph& g, prunelab::ad::Var out, std::uint64_t seed) {
    namespace ad = prunelab::ad;
    std::mt19937_64 rng(seed);
    const Tensor2D& v = g.value(out);
    return ad::sum(g, ad::hadamard(g, out, g.constant(uniform(v.rows(), v.cols(), rng))));
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("prunelab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
