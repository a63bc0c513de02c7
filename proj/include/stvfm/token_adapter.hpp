#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stvfm/nn.hpp"
#include "stvfm/tensor.hpp"

// Token adapter stage shared by both input branches: spatial patch
// tokenization, a per-position temporal encoder, a linear map into the
// backbone width, and a spatial positional embedding broadcast over frames.
//
// Layout conventions, relied on throughout:
//   PatchTokens / VfmTokens rows are t-major: row (t*N_s + n).
//   TemporalEncoded rows are n-major: row (n*T + t), so each spatial
//   position's history is contiguous for the temporal blocks.

namespace stvfm {

struct PatchGeometry {
    std::size_t channels = 0, height = 0, width = 0, patch = 0;
    std::size_t padded_h = 0, padded_w = 0;  // rounded up to the patch side
    std::size_t grid_h = 0, grid_w = 0;

    std::size_t per_frame() const { return grid_h * grid_w; }
    std::size_t token_dim() const { return patch * patch * channels; }
};

inline PatchGeometry make_patch_geometry(std::size_t channels, std::size_t height, std::size_t width,
                                         std::size_t patch) {
    if (channels < 1 || height < 1 || width < 1 || patch < 1)
        fail(ErrorCode::Invalid, "patch geometry dims must all be at least 1");
    PatchGeometry g;
    g.channels = channels;
    g.height = height;
    g.width = width;
    g.patch = patch;
    g.grid_h = (height + patch - 1) / patch;
    g.grid_w = (width + patch - 1) / patch;
    g.padded_h = g.grid_h * patch;
    g.padded_w = g.grid_w * patch;
    return g;
}

template <class T>
struct PatchTokens {
    Tensor<T> values;  // [T*N_s x P_s^2*C], t-major rows
    std::size_t frames = 0, per_frame = 0, dim = 0;
};

template <class T>
struct TemporalEncoded {
    Tensor<T> values;  // [N_s*T x D_T], n-major rows
    std::size_t frames = 0, per_frame = 0, dim = 0;
};

template <class T>
struct VfmTokens {
    Tensor<T> values;  // [T*N_s x D_VFM], t-major rows
    std::size_t frames = 0, per_frame = 0, dim = 0;
};

// token n = gy*grid_w + gx holds the patch at (gy, gx); element
// d = (c*P + py)*P + px, i.e. channel-major then row-major within the patch.
// Cells beyond the unpadded extent map to index -1, which gathers a zero.
template <class T>
PatchTokens<T> patchify(const Tensor<T>& frames, const PatchGeometry& g) {
    if (frames.rank() != 4 || frames.dim(1) != g.channels || frames.dim(2) != g.height ||
        frames.dim(3) != g.width)
        fail(ErrorCode::ShapeMismatch, "patchify expects frames [T x " + std::to_string(g.channels) + " x " +
                                           std::to_string(g.height) + " x " + std::to_string(g.width) +
                                           "], got " + shape_str(frames.shape()));
    const std::size_t steps = frames.dim(0);
    const std::size_t n_s = g.per_frame(), dim = g.token_dim(), p = g.patch;
    auto idx = std::make_shared<std::vector<long>>();
    idx->reserve(steps * n_s * dim);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t gy = 0; gy < g.grid_h; ++gy)
            for (std::size_t gx = 0; gx < g.grid_w; ++gx)
                for (std::size_t c = 0; c < g.channels; ++c)
                    for (std::size_t py = 0; py < p; ++py)
                        for (std::size_t px = 0; px < p; ++px) {
                            const std::size_t h = gy * p + py, w = gx * p + px;
                            idx->push_back(h < g.height && w < g.width
                                               ? static_cast<long>(((t * g.channels + c) * g.height + h) * g.width + w)
                                               : -1L);
                        }
    return {gather_flat(frames, idx, {steps * n_s, dim}), steps, n_s, dim};
}

// Exact inverse on the unpadded extent; padded token elements are never read.
template <class T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t frames, const PatchGeometry& g) {
    const std::size_t n_s = g.per_frame(), dim = g.token_dim(), p = g.patch;
    if (tokens.rank() != 2 || tokens.dim(0) != frames * n_s || tokens.dim(1) != dim)
        fail(ErrorCode::ShapeMismatch, "unpatchify expects tokens [" + std::to_string(frames * n_s) + " x " +
                                           std::to_string(dim) + "], got " + shape_str(tokens.shape()));
    auto idx = std::make_shared<std::vector<long>>();
    idx->reserve(frames * g.channels * g.height * g.width);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t h = 0; h < g.height; ++h)
                for (std::size_t w = 0; w < g.width; ++w) {
                    const std::size_t n = (h / p) * g.grid_w + (w / p);
                    const std::size_t d = (c * p + h % p) * p + w % p;
                    idx->push_back(static_cast<long>((t * n_s + n) * dim + d));
                }
    return gather_flat(tokens, idx, {frames, g.channels, g.height, g.width});
}

// ---- temporal context encoder ----

template <class T>
struct TemporalEncoder {
    std::size_t t_max = 0, heads = 1;
    Tensor<T> w_proj;  // token_dim -> D_T
    Tensor<T> e_temp;  // [T_max x D_T] learned per-step embeddings
    std::vector<TransformerBlock<T>> blocks;
};

inline void register_temporal_encoder(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                                      std::size_t d_t, std::size_t t_max, std::size_t depth, Rng& rng,
                                      const std::string& group = "temporal_encoder") {
    register_linear(store, prefix + ".w_proj", in_dim, d_t, rng, false, group);
    std::vector<float> e(t_max * d_t);
    for (auto& v : e) v = 0.02f * rng.normal();
    store.add(prefix + ".e_temp", {t_max, d_t}, std::move(e), false, group);
    for (std::size_t i = 0; i < depth; ++i)
        register_block(store, prefix + ".blk" + std::to_string(i), d_t, rng, false, group);
}

template <class T>
TemporalEncoder<T> bind_temporal_encoder(Binder<T>& bind, const std::string& prefix, std::size_t t_max,
                                         std::size_t depth, std::size_t heads) {
    TemporalEncoder<T> enc;
    enc.t_max = t_max;
    enc.heads = heads;
    enc.w_proj = bind(prefix + ".w_proj");
    enc.e_temp = bind(prefix + ".e_temp");
    const std::size_t d_t = enc.w_proj.dim(1);
    enc.blocks.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i)
        enc.blocks.push_back(bind_block(bind, prefix + ".blk" + std::to_string(i), d_t, heads));
    return enc;
}

// Attention runs over the T axis independently per spatial position, with
// block parameters shared across positions. Never mixes positions.
template <class T>
TemporalEncoded<T> temporal_context_encode(const TemporalEncoder<T>& enc, const PatchTokens<T>& tokens) {
    const std::size_t steps = tokens.frames, n_s = tokens.per_frame;
    if (steps > enc.t_max)
        fail(ErrorCode::Invalid, "temporal encoder saw " + std::to_string(steps) + " frames but holds " +
                                     std::to_string(enc.t_max) + " position embeddings");
    const std::size_t d_t = enc.w_proj.dim(1);
    auto z = matmul(tokens.values, enc.w_proj);  // [T*N_s x D_T]
    // regroup t-major -> n-major so each position's history is contiguous
    z = reshape(transpose(reshape(z, {steps, n_s, d_t}), 0, 1), {n_s * steps, d_t});
    auto e = slice(enc.e_temp, 0, 0, steps);
    std::vector<Tensor<T>> per_position;
    per_position.reserve(n_s);
    for (std::size_t n = 0; n < n_s; ++n) {
        auto zn = add(slice(z, 0, n * steps, steps), e);
        for (const auto& blk : enc.blocks) zn = transformer_block(blk, zn);
        per_position.push_back(zn);
    }
    return {concat(per_position, 0), steps, n_s, d_t};
}

// Regroup n-major back to t-major (rows t0n0, t0n1, ..., t1n0, ...) and map
// into the backbone width with a single linear layer.
template <class T>
VfmTokens<T> token_adapt(const TemporalEncoded<T>& z, const Tensor<T>& w_adapt) {
    if (w_adapt.rank() != 2 || w_adapt.dim(0) != z.dim)
        fail(ErrorCode::ShapeMismatch,
             "token_adapt weight must be [" + std::to_string(z.dim) + " x D], got " + shape_str(w_adapt.shape()));
    auto t_major =
        reshape(transpose(reshape(z.values, {z.per_frame, z.frames, z.dim}), 0, 1), {z.frames * z.per_frame, z.dim});
    return {matmul(t_major, w_adapt), z.frames, z.per_frame, w_adapt.dim(1)};
}

// E_pos[n] is added to row (t*N_s + n) for every frame t; its gradient
// accumulates across all T occurrences.
template <class T>
VfmTokens<T> add_positional(const VfmTokens<T>& z, const Tensor<T>& e_pos) {
    if (e_pos.rank() != 2 || e_pos.dim(0) != z.per_frame || e_pos.dim(1) != z.dim)
        fail(ErrorCode::ShapeMismatch, "positional embedding must be [" + std::to_string(z.per_frame) + " x " +
                                           std::to_string(z.dim) + "], got " + shape_str(e_pos.shape()));
    return {add(z.values, tile_rows(e_pos, z.frames)), z.frames, z.per_frame, z.dim};
}

}  // namespace stvfm
