// Compiled with -mavx2 (and without -mfma so that a*b+c is never fused).
#include "kernels_internal.hpp"

#if PRUNELAB_HAVE_AVX2_TU

#include <immintrin.h>

namespace prunelab::kernels {
namespace {

void gemm_acc(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
              std::size_t n) {
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * n;
            const __m256d av = _mm256_set1_pd(aip);
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                __m256d cv = _mm256_loadu_pd(crow + j);
                cv = _mm256_add_pd(cv, _mm256_mul_pd(av, _mm256_loadu_pd(brow + j)));
                _mm256_storeu_pd(crow + j, cv);
            }
            for (; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void axpy(double* y, const double* x, double alpha, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc(double* y, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_add_pd(yv, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void add(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void scale(double* out, const double* a, double s, std::size_t n) {
    const __m256d sv = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(sv, _mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) out[i] = s * a[i];
}

void relu(double* out, const double* a, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // max_pd returns its second operand for NaN and for (-0, +0), like the scalar path.
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
    }
    for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_backward_acc(double* ga, const double* a, const double* g, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
        const __m256d gv = _mm256_and_pd(keep, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(ga + i, _mm256_add_pd(_mm256_loadu_pd(ga + i), gv));
    }
    for (; i < n; ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
}

constexpr KernelTable kAvx2{
    "avx2", gemm_acc, axpy, mul, mul_acc, add, scale, relu, relu_backward_acc,
};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace prunelab::kernels

#else

namespace prunelab::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace prunelab::kernels

#endif
