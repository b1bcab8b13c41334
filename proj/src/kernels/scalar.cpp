#include "kernels_internal.hpp"

namespace prunelab::kernels {
namespace {

void gemm_acc(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void axpy(double* y, const double* x, double alpha, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc(double* y, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void add(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void scale(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = s * a[i];
}

void relu(double* out, const double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_acc(double* ga, const double* a, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
}

constexpr KernelTable kScalar{
    "scalar", gemm_acc, axpy, mul, mul_acc, add, scale, relu, relu_backward_acc,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace prunelab::kernels
