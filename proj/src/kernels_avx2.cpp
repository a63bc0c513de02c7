// AVX2 lane. Vectorization never crosses a reduction axis: elementwise ops
// are lane-parallel and matmul vectorizes across output columns while the
// k-loop stays sequential, so every element sees the exact operation order
// of the scalar reference. No FMA intrinsics (mul-then-add rounding must
// match the reference).

#include "stvfm/kernels.hpp"

#include <cmath>

#if defined(__AVX2__)

#include <immintrin.h>

namespace stvfm::kernels::avx2 {

bool compiled() { return true; }

void add(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void div_scalar(const float* a, float s, float* out, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_div_ps(_mm256_loadu_ps(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] / s;
}

void sqrt_v(const float* a, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_sqrt_ps(_mm256_loadu_ps(a + i)));
    for (; i < n; ++i) out[i] = std::sqrt(a[i]);
}

void acc_add(float* dst, const float* src, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), _mm256_loadu_ps(src + i)));
    for (; i < n; ++i) dst[i] += src[i];
}

void acc_scaled(float* dst, const float* src, float s, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(_mm256_loadu_ps(src + i), vs);
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += src[i] * s;
}

void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* outr = out + r * cols;
        std::size_t c = 0;
        for (; c + 8 <= cols; c += 8)
            _mm256_storeu_ps(outr + c, _mm256_add_ps(_mm256_loadu_ps(xr + c), _mm256_loadu_ps(bias + c)));
        for (; c < cols; ++c) outr[c] = xr[c] + bias[c];
    }
}

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256 acc = _mm256_setzero_ps();
            for (std::size_t kk = 0; kk < k; ++kk) {
                __m256 av = _mm256_set1_ps(ai[kk]);
                __m256 bv = _mm256_loadu_ps(b + kk * n + j);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(av, bv));
            }
            _mm256_storeu_ps(ci + j, acc);
        }
        for (; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t kk = 0; kk < k; ++kk) acc = acc + ai[kk] * b[kk * n + j];
            ci[j] = acc;
        }
    }
}

} // namespace stvfm::kernels::avx2

#else // !__AVX2__

#include "stvfm/error.hpp"

namespace stvfm::kernels::avx2 {

bool compiled() { return false; }

namespace {
[[noreturn]] void unavailable() { fail(ErrorCode::Config, "AVX2 kernels not compiled into this binary"); }
} // namespace

void add(const float*, const float*, float*, std::size_t) { unavailable(); }
void sub(const float*, const float*, float*, std::size_t) { unavailable(); }
void mul(const float*, const float*, float*, std::size_t) { unavailable(); }
void scale(const float*, float, float*, std::size_t) { unavailable(); }
void div_scalar(const float*, float, float*, std::size_t) { unavailable(); }
void sqrt_v(const float*, float*, std::size_t) { unavailable(); }
void acc_add(float*, const float*, std::size_t) { unavailable(); }
void acc_scaled(float*, const float*, float, std::size_t) { unavailable(); }
void add_bias(const float*, const float*, float*, std::size_t, std::size_t) { unavailable(); }
void matmul(const float*, const float*, float*, std::size_t, std::size_t, std::size_t) { unavailable(); }

} // namespace stvfm::kernels::avx2

#endif
