#include "kernels_internal.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace prunelab::kernels {
namespace {

// vfmaq_f64 would fuse the multiply-add; keep vmulq + vaddq for scalar parity.

void gemm_acc(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
              std::size_t n) {
    const std::size_t n2 = n - n % 2;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * n;
            const float64x2_t av = vdupq_n_f64(aip);
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t cv = vld1q_f64(crow + j);
                cv = vaddq_f64(cv, vmulq_f64(av, vld1q_f64(brow + j)));
                vst1q_f64(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void axpy(double* y, const double* x, double alpha, std::size_t n) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(av, vld1q_f64(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc(double* y, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i,
                  vaddq_f64(vld1q_f64(y + i), vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i))));
    }
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void add(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void scale(double* out, const double* a, double s, std::size_t n) {
    const float64x2_t sv = vdupq_n_f64(s);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(sv, vld1q_f64(a + i)));
    for (; i < n; ++i) out[i] = s * a[i];
}

void relu(double* out, const double* a, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(a + i);
        // select instead of vmaxq: vmaxq propagates NaN, the scalar path maps it to 0
        vst1q_f64(out + i, vbslq_f64(vcgtq_f64(v, zero), v, zero));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_acc(double* ga, const double* a, const double* g, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t gv = vbslq_f64(vcgtq_f64(vld1q_f64(a + i), zero), vld1q_f64(g + i), zero);
        vst1q_f64(ga + i, vaddq_f64(vld1q_f64(ga + i), gv));
    }
    for (; i < n; ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
}

constexpr KernelTable kNeon{
    "neon", gemm_acc, axpy, mul, mul_acc, add, scale, relu, relu_backward_acc,
};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace prunelab::kernels

#else

namespace prunelab::kernels {
const KernelTable* neon_table() { return nullptr; }
}  // namespace prunelab::kernels

#endif
