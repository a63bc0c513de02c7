// NEON lane (aarch64). Same order-preserving layout as the AVX2 lane:
// elementwise ops are lane-parallel, matmul vectorizes over output columns
// with a sequential k-loop, and fused multiply-add is avoided.

#include "stvfm/kernels.hpp"

#if defined(__ARM_NEON) || defined(__ARM_NEON__)

#include <arm_neon.h>

#include <cmath>

namespace stvfm::kernels::neon {

bool compiled() { return true; }

void add(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void div_scalar(const float* a, float s, float* out, std::size_t n) {
#if defined(__aarch64__)
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vdivq_f32(vld1q_f32(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] / s;
#else
    // 32-bit NEON has no IEEE divide
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / s;
#endif
}

void sqrt_v(const float* a, float* out, std::size_t n) {
#if defined(__aarch64__)
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vsqrtq_f32(vld1q_f32(a + i)));
    for (; i < n; ++i) out[i] = std::sqrt(a[i]);
#else
    for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
#endif
}

void acc_add(float* dst, const float* src, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(dst + i, vaddq_f32(vld1q_f32(dst + i), vld1q_f32(src + i)));
    for (; i < n; ++i) dst[i] += src[i];
}

void acc_scaled(float* dst, const float* src, float s, std::size_t n) {
    const float32x4_t vs = vdupq_n_f32(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t prod = vmulq_f32(vld1q_f32(src + i), vs);
        vst1q_f32(dst + i, vaddq_f32(vld1q_f32(dst + i), prod));
    }
    for (; i < n; ++i) dst[i] += src[i] * s;
}

void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* outr = out + r * cols;
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4)
            vst1q_f32(outr + c, vaddq_f32(vld1q_f32(xr + c), vld1q_f32(bias + c)));
        for (; c < cols; ++c) outr[c] = xr[c] + bias[c];
    }
}

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            float32x4_t acc = vdupq_n_f32(0.0f);
            for (std::size_t kk = 0; kk < k; ++kk) {
                float32x4_t av = vdupq_n_f32(ai[kk]);
                float32x4_t bv = vld1q_f32(b + kk * n + j);
                acc = vaddq_f32(acc, vmulq_f32(av, bv));
            }
            vst1q_f32(ci + j, acc);
        }
        for (; j < n; ++j) {
            float acc = 0.0f;
            for (std::size_t kk = 0; kk < k; ++kk) acc = acc + ai[kk] * b[kk * n + j];
            ci[j] = acc;
        }
    }
}

} // namespace stvfm::kernels::neon

#else // !__ARM_NEON

#include "stvfm/error.hpp"

namespace stvfm::kernels::neon {

bool compiled() { return false; }

namespace {
[[noreturn]] void unavailable() { fail(ErrorCode::Config, "NEON kernels not compiled into this binary"); }
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

} // namespace stvfm::kernels::neon

#endif
