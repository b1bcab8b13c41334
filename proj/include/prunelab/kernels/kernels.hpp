#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace prunelab::kernels {

// Inner loops used by the autodiff layer and the optimizers. Every variant
// vectorizes across independent output lanes only and never reassociates a
// sum, so all variants produce bitwise-identical results to `scalar`.
// Transcendentals (exp, log) and full reductions stay in scalar code.
struct KernelTable {
    const char* name;

    // c[m x n] += a[m x k] * b[k x n], all row-major and contiguous.
    // Rows of `a` equal to zero are skipped entry by entry.
    void (*gemm_acc)(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
                     std::size_t n);
    // y += alpha * x
    void (*axpy)(double* y, const double* x, double alpha, std::size_t n);
    // out = a * b
    void (*mul)(double* out, const double* a, const double* b, std::size_t n);
    // y += a * b
    void (*mul_acc)(double* y, const double* a, const double* b, std::size_t n);
    // out = a + b
    void (*add)(double* out, const double* a, const double* b, std::size_t n);
    // out = s * a
    void (*scale)(double* out, const double* a, double s, std::size_t n);
    // out = max(a, 0)
    void (*relu)(double* out, const double* a, std::size_t n);
    // ga += (a > 0) ? g : 0
    void (*relu_backward_acc)(double* ga, const double* a, const double* g, std::size_t n);
};

const KernelTable& scalar_table();

// Tables compiled into this binary and supported by the running CPU.
// Always starts with the scalar table.
std::vector<const KernelTable*> available_tables();

// The table in use. Chosen on first call: PRUNELAB_KERNELS=<name> if set and
// available, otherwise the widest supported variant.
const KernelTable& active();

// Force a variant by name; returns false (and leaves the selection unchanged)
// when the variant is unknown or unsupported on this CPU.
bool select(std::string_view name);

}  // namespace prunelab::kernels
