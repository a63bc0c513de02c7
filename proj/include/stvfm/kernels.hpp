#pragma once

#include <cmath>
#include <cstddef>
#include <string>

// Dense float kernels behind the tensor layer. Every op has a scalar
// reference implementation; AVX2 and NEON variants are selected at runtime
// and are required to produce bit-identical results to the reference. That
// holds because the vector lanes never reorder a reduction: matmul is
// vectorized across output columns with the k-loop kept sequential, and the
// elementwise ops are lane-parallel with no accumulation at all. FMA is not
// used and the build disables FP contraction, so mul-then-add rounding is
// identical in every lane.
//
// Double variants exist for the gradient-check path and always run scalar.

namespace stvfm::kernels {

enum class Lane { Scalar, Avx2, Neon };

// Resolved once per process. Honors STVFM_KERNELS=scalar|avx2|neon|auto.
Lane active_lane();
const char* lane_name(Lane lane);

// true when the lane is compiled in and the host CPU can execute it
bool lane_runnable(Lane lane);

// ---- scalar reference ----
namespace scalar {

template <class T>
void add(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void scale(const T* a, T s, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <class T>
void div_scalar(const T* a, T s, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / s;
}

template <class T>
void sqrt_v(const T* a, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
}

template <class T>
void acc_add(T* dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <class T>
void acc_scaled(T* dst, const T* src, T s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i] * s;
}

// out[r*cols + c] = x[r*cols + c] + bias[c]
template <class T>
void add_bias(const T* x, const T* bias, T* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
}

// c[m x n] = a[m x k] * b[k x n], accumulation strictly k = 0..k-1 per element
template <class T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t kk = 0; kk < k; ++kk) acc = acc + a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = acc;
        }
    }
}

} // namespace scalar

// ---- AVX2 lane (x86), compiled into its own TU with -mavx2 ----
namespace avx2 {
bool compiled();
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float s, float* out, std::size_t n);
void div_scalar(const float* a, float s, float* out, std::size_t n);
void sqrt_v(const float* a, float* out, std::size_t n);
void acc_add(float* dst, const float* src, std::size_t n);
void acc_scaled(float* dst, const float* src, float s, std::size_t n);
void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols);
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
} // namespace avx2

// ---- NEON lane (aarch64) ----
namespace neon {
bool compiled();
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float s, float* out, std::size_t n);
void div_scalar(const float* a, float s, float* out, std::size_t n);
void sqrt_v(const float* a, float* out, std::size_t n);
void acc_add(float* dst, const float* src, std::size_t n);
void acc_scaled(float* dst, const float* src, float s, std::size_t n);
void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols);
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
} // namespace neon

// ---- dispatched float entry points ----
void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float s, float* out, std::size_t n);
void div_scalar(const float* a, float s, float* out, std::size_t n);
void sqrt_v(const float* a, float* out, std::size_t n);
void acc_add(float* dst, const float* src, std::size_t n);
void acc_scaled(float* dst, const float* src, float s, std::size_t n);
void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols);
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

// double always routes to the scalar reference
inline void add(const double* a, const double* b, double* out, std::size_t n) { scalar::add(a, b, out, n); }
inline void sub(const double* a, const double* b, double* out, std::size_t n) { scalar::sub(a, b, out, n); }
inline void mul(const double* a, const double* b, double* out, std::size_t n) { scalar::mul(a, b, out, n); }
inline void scale(const double* a, double s, double* out, std::size_t n) { scalar::scale(a, s, out, n); }
inline void div_scalar(const double* a, double s, double* out, std::size_t n) { scalar::div_scalar(a, s, out, n); }
inline void sqrt_v(const double* a, double* out, std::size_t n) { scalar::sqrt_v(a, out, n); }
inline void acc_add(double* dst, const double* src, std::size_t n) { scalar::acc_add(dst, src, n); }
inline void acc_scaled(double* dst, const double* src, double s, std::size_t n) { scalar::acc_scaled(dst, src, s, n); }
inline void add_bias(const double* x, const double* bias, double* out, std::size_t rows, std::size_t cols) {
    scalar::add_bias(x, bias, out, rows, cols);
}
inline void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    scalar::matmul(a, b, c, m, k, n);
}

} // namespace stvfm::kernels
