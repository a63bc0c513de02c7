#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stvfm/error.hpp"
#include "stvfm/params.hpp"
#include "stvfm/rng.hpp"
#include "stvfm/tensor.hpp"

// Transformer building blocks over 2D token matrices [n x D]: multi-head
// attention (no Q/K/V/O biases), pre-norm encoder block with a 4D gelu FFN,
// and the bottleneck adapter that sits between self-attention and its
// residual add. All blocks are pure functions of bound parameters.

namespace stvfm {

constexpr double kLnEps = 1e-5;

template <class T>
struct Attention {
    std::size_t dim = 0, heads = 1;
    Tensor<T> wq, wk, wv, wo;  // each [D x D]
};

template <class T>
struct TransformerBlock {
    Attention<T> attn;
    Tensor<T> w1, b1, w2, b2;  // FFN D -> 4D -> D
};

template <class T>
struct Adapter {
    Tensor<T> down, up;  // D -> r, r -> D; up starts at zero
};

// ---- initialization / registration ----

inline std::vector<float> glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::vector<float> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return v;
}

inline void register_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                            Rng& rng, bool frozen, const std::string& group) {
    store.add(name, {in, out}, glorot_uniform(rng, in, out), frozen, group);
}

inline void register_zeros(ParamStore& store, const std::string& name, Shape shape, bool frozen,
                           const std::string& group) {
    std::vector<float> v(numel(shape), 0.0f);
    store.add(name, std::move(shape), std::move(v), frozen, group);
}

inline void register_attention(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng,
                               bool frozen, const std::string& group) {
    register_linear(store, prefix + ".wq", dim, dim, rng, frozen, group);
    register_linear(store, prefix + ".wk", dim, dim, rng, frozen, group);
    register_linear(store, prefix + ".wv", dim, dim, rng, frozen, group);
    register_linear(store, prefix + ".wo", dim, dim, rng, frozen, group);
}

inline void register_block(ParamStore& store, const std::string& prefix, std::size_t dim, Rng& rng, bool frozen,
                           const std::string& group) {
    register_attention(store, prefix + ".attn", dim, rng, frozen, group);
    register_linear(store, prefix + ".w1", dim, 4 * dim, rng, frozen, group);
    register_zeros(store, prefix + ".b1", {4 * dim}, frozen, group);
    register_linear(store, prefix + ".w2", 4 * dim, dim, rng, frozen, group);
    register_zeros(store, prefix + ".b2", {dim}, frozen, group);
}

inline void register_adapter(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t r,
                             Rng& rng, const std::string& group) {
    if (r >= dim)
        fail(ErrorCode::Invalid,
             "adapter bottleneck r=" + std::to_string(r) + " must be smaller than D=" + std::to_string(dim));
    register_linear(store, prefix + ".down", dim, r, rng, false, group);
    // zero up-projection: the adapter starts as an exact identity
    register_zeros(store, prefix + ".up", {r, dim}, false, group);
}

// ---- binding ----

template <class T>
Attention<T> bind_attention(Binder<T>& bind, const std::string& prefix, std::size_t dim, std::size_t heads) {
    if (heads < 1 || dim % heads != 0)
        fail(ErrorCode::Invalid,
             "attention dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    return Attention<T>{dim, heads, bind(prefix + ".wq"), bind(prefix + ".wk"), bind(prefix + ".wv"),
                        bind(prefix + ".wo")};
}

template <class T>
TransformerBlock<T> bind_block(Binder<T>& bind, const std::string& prefix, std::size_t dim, std::size_t heads) {
    return TransformerBlock<T>{bind_attention(bind, prefix + ".attn", dim, heads), bind(prefix + ".w1"),
                               bind(prefix + ".b1"), bind(prefix + ".w2"), bind(prefix + ".b2")};
}

template <class T>
Adapter<T> bind_adapter(Binder<T>& bind, const std::string& prefix) {
    return Adapter<T>{bind(prefix + ".down"), bind(prefix + ".up")};
}

// ---- forward ----

// per-head scaled-dot-product mixing over already-projected q/k/v, followed
// by the output projection; the key/value rows may come from any source
template <class T>
Tensor<T> attention_mix(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                        const Tensor<T>& wo, std::vector<Tensor<T>>* attn_weights = nullptr) {
    const std::size_t dh = q.dim(1) / heads;
    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<T>> mixed;
    mixed.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice(q, 1, h * dh, dh);
        auto kh = slice(k, 1, h * dh, dh);
        auto vh = slice(v, 1, h * dh, dh);
        auto weights = softmax(scale(matmul(qh, transpose(kh, 0, 1)), inv_sqrt_dh), 1);
        if (attn_weights) attn_weights->push_back(weights);
        mixed.push_back(matmul(weights, vh));
    }
    return matmul(concat(mixed, 1), wo);
}

// queries [n x D] attend over keys_values [m x D]; per-head weight matrices
// are appended to attn_weights when requested
template <class T>
Tensor<T> multi_head_attention(const Attention<T>& p, const Tensor<T>& queries, const Tensor<T>& keys_values,
                               std::vector<Tensor<T>>* attn_weights = nullptr) {
    if (queries.rank() != 2 || keys_values.rank() != 2 || queries.dim(1) != p.dim || keys_values.dim(1) != p.dim)
        fail(ErrorCode::ShapeMismatch, "attention expects [n x " + std::to_string(p.dim) + "] queries, got " +
                                           shape_str(queries.shape()) + " against " +
                                           shape_str(keys_values.shape()));
    return attention_mix(matmul(queries, p.wq), matmul(keys_values, p.wk), matmul(keys_values, p.wv), p.heads,
                         p.wo, attn_weights);
}

template <class T>
Tensor<T> feed_forward(const TransformerBlock<T>& p, const Tensor<T>& x) {
    return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// x + up(gelu(down(x))); identity while up is zero
template <class T>
Tensor<T> adapter_apply(const Adapter<T>& p, const Tensor<T>& x) {
    return add(x, matmul(gelu(matmul(x, p.down)), p.up));
}

// pre-norm: x + Attn(LN(x)), then x + FFN(LN(x)); the optional adapter
// transforms the attention output before its residual add
template <class T>
Tensor<T> transformer_block(const TransformerBlock<T>& p, const Tensor<T>& x, const Adapter<T>* adapter = nullptr,
                            std::vector<Tensor<T>>* attn_weights = nullptr) {
    auto ln1 = layer_norm(x, static_cast<T>(kLnEps));
    auto attn_out = multi_head_attention(p.attn, ln1, ln1, attn_weights);
    if (adapter) attn_out = adapter_apply(*adapter, attn_out);
    auto a = add(x, attn_out);
    return add(a, feed_forward(p, layer_norm(a, static_cast<T>(kLnEps))));
}

} // namespace stvfm
