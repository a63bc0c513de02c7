#include "stvfm/kernels.hpp"

#include <cstdlib>
#include <string>

#include "stvfm/error.hpp"

namespace stvfm::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

bool cpu_has_neon() {
#if defined(__aarch64__)
    return true;
#elif defined(__ARM_NEON) || defined(__ARM_NEON__)
    return true;
#else
    return false;
#endif
}

Lane resolve_lane() {
    const char* env = std::getenv("STVFM_KERNELS");
    std::string req = env ? env : "auto";
    if (req == "scalar") return Lane::Scalar;
    if (req == "avx2") {
        if (!avx2::compiled() || !cpu_has_avx2())
            fail(ErrorCode::Config, "STVFM_KERNELS=avx2 requested but AVX2 is unavailable");
        return Lane::Avx2;
    }
    if (req == "neon") {
        if (!neon::compiled() || !cpu_has_neon())
            fail(ErrorCode::Config, "STVFM_KERNELS=neon requested but NEON is unavailable");
        return Lane::Neon;
    }
    if (req != "auto")
        fail(ErrorCode::Config, "STVFM_KERNELS must be one of scalar|avx2|neon|auto, got '" + req + "'");
    if (avx2::compiled() && cpu_has_avx2()) return Lane::Avx2;
    if (neon::compiled() && cpu_has_neon()) return Lane::Neon;
    return Lane::Scalar;
}

} // namespace

Lane active_lane() {
    static const Lane lane = resolve_lane();
    return lane;
}

bool lane_runnable(Lane lane) {
    switch (lane) {
        case Lane::Avx2: return avx2::compiled() && cpu_has_avx2();
        case Lane::Neon: return neon::compiled() && cpu_has_neon();
        default: return true;
    }
}

const char* lane_name(Lane lane) {
    switch (lane) {
        case Lane::Avx2: return "avx2";
        case Lane::Neon: return "neon";
        default: return "scalar";
    }
}

#define STVFM_DISPATCH(fn, ...)                 \
    switch (active_lane()) {                    \
        case Lane::Avx2: return avx2::fn(__VA_ARGS__); \
        case Lane::Neon: return neon::fn(__VA_ARGS__); \
        default: return scalar::fn(__VA_ARGS__);       \
    }

void add(const float* a, const float* b, float* out, std::size_t n) { STVFM_DISPATCH(add, a, b, out, n) }
void sub(const float* a, const float* b, float* out, std::size_t n) { STVFM_DISPATCH(sub, a, b, out, n) }
void mul(const float* a, const float* b, float* out, std::size_t n) { STVFM_DISPATCH(mul, a, b, out, n) }
void scale(const float* a, float s, float* out, std::size_t n) { STVFM_DISPATCH(scale, a, s, out, n) }
void div_scalar(const float* a, float s, float* out, std::size_t n) { STVFM_DISPATCH(div_scalar, a, s, out, n) }
void sqrt_v(const float* a, float* out, std::size_t n) { STVFM_DISPATCH(sqrt_v, a, out, n) }
void acc_add(float* dst, const float* src, std::size_t n) { STVFM_DISPATCH(acc_add, dst, src, n) }
void acc_scaled(float* dst, const float* src, float s, std::size_t n) { STVFM_DISPATCH(acc_scaled, dst, src, s, n) }
void add_bias(const float* x, const float* bias, float* out, std::size_t rows, std::size_t cols) {
    STVFM_DISPATCH(add_bias, x, bias, out, rows, cols)
}
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
    STVFM_DISPATCH(matmul, a, b, c, m, k, n)
}

#undef STVFM_DISPATCH

} // namespace stvfm::kernels
