#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stvfm/nn.hpp"
#include "stvfm/token_adapter.hpp"

// Bilateral cross-prompt coordination plus the forecasting decoder and output
// heads. Prompts are pooled from one branch's features per instance and
// extend the other branch's attention key/value set under a single joint
// softmax, so each weight row normalizes over all m + L_p entries. Prompt
// key and value projections start at zero: at initialization each branch
// therefore evolves by plain self-attention, independent of the other.

namespace stvfm {

enum class BranchKind { St, Flow };

template <class T>
struct PromptSet {
    Tensor<T> values;  // [L_p x D]
    std::size_t count = 0;
    BranchKind source = BranchKind::St;
};

template <class T>
struct PromptPool {
    Tensor<T> queries;  // [L_p x D] learned
    Tensor<T> wk, wv;   // [D x D]
};

template <class T>
struct CoordinationBranch {
    PromptPool<T> pool;        // extracts this branch's own prompts
    TransformerBlock<T> block; // self-attention + FFN around the extended KV set
    Tensor<T> wpk, wpv;        // prompt key/value projections, zero-initialized
};

template <class T>
struct CoordinationLayer {
    CoordinationBranch<T> st, flow;
};

struct CoordinationConfig {
    std::size_t layers = 2, l_p = 4, heads = 4;
    bool reextract_prompts = true;  // false: pool once from the layer-0 inputs
    bool synchronous = true;        // false: flow reads the updated st features
};

template <class T>
struct Coordinator {
    CoordinationConfig cfg;
    std::vector<CoordinationLayer<T>> layers;
};

inline void validate_coordination_config(const CoordinationConfig& cfg) {
    if (cfg.layers < 1) fail(ErrorCode::Invalid, "coordination needs at least one layer");
    if (cfg.heads < 1) fail(ErrorCode::Invalid, "coordination needs at least one head");
}

inline void register_coordination(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  const CoordinationConfig& cfg, Rng& rng, const std::string& group = "prompts") {
    validate_coordination_config(cfg);
    for (std::size_t l = 0; l < cfg.layers; ++l)
        for (const char* branch : {".st", ".flow"}) {
            const std::string p = prefix + ".lyr" + std::to_string(l) + branch;
            std::vector<float> queries(cfg.l_p * dim);
            for (auto& v : queries) v = 0.02f * rng.normal();
            store.add(p + ".pool.queries", {cfg.l_p, dim}, std::move(queries), false, group);
            register_linear(store, p + ".pool.wk", dim, dim, rng, false, group);
            register_linear(store, p + ".pool.wv", dim, dim, rng, false, group);
            register_block(store, p + ".blk", dim, rng, false, group);
            register_zeros(store, p + ".wpk", {dim, dim}, false, group);
            register_zeros(store, p + ".wpv", {dim, dim}, false, group);
        }
}

template <class T>
Coordinator<T> bind_coordination(Binder<T>& bind, const std::string& prefix, std::size_t dim,
                                 const CoordinationConfig& cfg) {
    validate_coordination_config(cfg);
    Coordinator<T> coord;
    coord.cfg = cfg;
    coord.layers.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        CoordinationLayer<T> layer;
        CoordinationBranch<T>* branches[2] = {&layer.st, &layer.flow};
        const char* names[2] = {".st", ".flow"};
        for (int i = 0; i < 2; ++i) {
            const std::string p = prefix + ".lyr" + std::to_string(l) + names[i];
            branches[i]->pool = PromptPool<T>{bind(p + ".pool.queries"), bind(p + ".pool.wk"), bind(p + ".pool.wv")};
            branches[i]->block = bind_block(bind, p + ".blk", dim, cfg.heads);
            branches[i]->wpk = bind(p + ".wpk");
            branches[i]->wpv = bind(p + ".wpv");
        }
        coord.layers.push_back(std::move(layer));
    }
    return coord;
}

// L_p learned queries attend (single head, no output projection) over all
// feature tokens; with identical tokens each prompt is that token's value
// projection.
template <class T>
PromptSet<T> extract_prompts(const PromptPool<T>& pool, const Tensor<T>& features, BranchKind source) {
    if (pool.queries.numel() == 0 || pool.queries.dim(0) == 0) return PromptSet<T>{Tensor<T>(), 0, source};
    const std::size_t dim = features.dim(1);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
    auto weights = softmax(scale(matmul(pool.queries, transpose(matmul(features, pool.wk), 0, 1)), inv_sqrt_d), 1);
    return PromptSet<T>{matmul(weights, matmul(features, pool.wv)), pool.queries.dim(0), source};
}

// Prompt-extended attention: keys/values are the branch's own m projected
// tokens concatenated with the L_p projected prompts, one joint softmax over
// all m + L_p entries. With L_p = 0 this is exactly multi_head_attention.
template <class T>
Tensor<T> cross_prompt_attend(const Attention<T>& p, const Tensor<T>& wpk, const Tensor<T>& wpv,
                              const Tensor<T>& tokens, const PromptSet<T>& prompts,
                              std::vector<Tensor<T>>* attn_weights = nullptr) {
    if (tokens.rank() != 2 || tokens.dim(1) != p.dim)
        fail(ErrorCode::ShapeMismatch,
             "cross_prompt_attend expects tokens [m x " + std::to_string(p.dim) + "], got " +
                 shape_str(tokens.shape()));
    auto q = matmul(tokens, p.wq);
    auto k = matmul(tokens, p.wk);
    auto v = matmul(tokens, p.wv);
    if (prompts.count > 0) {
        if (prompts.values.dim(1) != p.dim)
            fail(ErrorCode::ShapeMismatch, "prompts carry dim " + std::to_string(prompts.values.dim(1)) +
                                               ", tokens carry " + std::to_string(p.dim));
        k = concat(std::vector<Tensor<T>>{k, matmul(prompts.values, wpk)}, 0);
        v = concat(std::vector<Tensor<T>>{v, matmul(prompts.values, wpv)}, 0);
    }
    return attention_mix(q, k, v, p.heads, p.wo, attn_weights);
}

namespace detail {

// pre-norm residual block whose attention sees the prompt-extended KV set
template <class T>
Tensor<T> coordination_step(const CoordinationBranch<T>& branch, const Tensor<T>& x, const PromptSet<T>& prompts,
                            std::vector<Tensor<T>>* attn_weights) {
    auto ln1 = layer_norm(x, static_cast<T>(kLnEps));
    auto a = add(x, cross_prompt_attend(branch.block.attn, branch.wpk, branch.wpv, ln1, prompts, attn_weights));
    return add(a, feed_forward(branch.block, layer_norm(a, static_cast<T>(kLnEps))));
}

}  // namespace detail

// Per layer: pool prompts from each branch, then let ST tokens attend with
// Flow-derived prompts and vice versa. Synchronous mode reads both prompt
// sets from the layer input; sequential mode lets Flow see the updated ST.
template <class T>
std::pair<VfmTokens<T>, VfmTokens<T>> coordinate(const Coordinator<T>& coord, const VfmTokens<T>& st,
                                                 const VfmTokens<T>& flow,
                                                 std::vector<Tensor<T>>* attn_weights = nullptr) {
    if (st.values.shape() != flow.values.shape() || st.frames != flow.frames)
        fail(ErrorCode::ShapeMismatch, "branch features disagree: " + shape_str(st.values.shape()) + " vs " +
                                           shape_str(flow.values.shape()));
    Tensor<T> st_x = st.values, flow_x = flow.values;
    PromptSet<T> p_st, p_flow;
    if (!coord.cfg.reextract_prompts) {
        p_st = extract_prompts(coord.layers[0].st.pool, st_x, BranchKind::St);
        p_flow = extract_prompts(coord.layers[0].flow.pool, flow_x, BranchKind::Flow);
    }
    for (const auto& layer : coord.layers) {
        if (coord.cfg.reextract_prompts) {
            p_st = extract_prompts(layer.st.pool, st_x, BranchKind::St);
            p_flow = extract_prompts(layer.flow.pool, flow_x, BranchKind::Flow);
        }
        if (coord.cfg.synchronous) {
            auto st_next = detail::coordination_step(layer.st, st_x, p_flow, attn_weights);
            flow_x = detail::coordination_step(layer.flow, flow_x, p_st, attn_weights);
            st_x = st_next;
        } else {
            st_x = detail::coordination_step(layer.st, st_x, p_flow, attn_weights);
            if (coord.cfg.reextract_prompts) p_st = extract_prompts(layer.st.pool, st_x, BranchKind::St);
            flow_x = detail::coordination_step(layer.flow, flow_x, p_st, attn_weights);
        }
    }
    return {VfmTokens<T>{st_x, st.frames, st.per_frame, st.dim},
            VfmTokens<T>{flow_x, flow.frames, flow.per_frame, flow.dim}};
}

// ---- forecasting decoder ----

template <class T>
struct Decoder {
    std::size_t horizon = 0, heads = 1;
    Tensor<T> queries;  // [Q x D] learned, shared across spatial positions
    std::vector<TransformerBlock<T>> blocks;
};

template <class T>
struct DecodedFuture {
    Tensor<T> values;  // [N_s*Q x D], n-major rows (position-major)
    std::size_t horizon = 0, per_frame = 0, dim = 0;
};

inline void register_decoder(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t horizon,
                             std::size_t depth, Rng& rng, const std::string& group = "decoder") {
    if (horizon < 1) fail(ErrorCode::Invalid, "decoder horizon must be at least 1");
    if (depth < 1) fail(ErrorCode::Invalid, "decoder depth must be at least 1");
    std::vector<float> queries(horizon * dim);
    for (auto& v : queries) v = 0.02f * rng.normal();
    store.add(prefix + ".queries", {horizon, dim}, std::move(queries), false, group);
    for (std::size_t i = 0; i < depth; ++i)
        register_block(store, prefix + ".blk" + std::to_string(i), dim, rng, false, group);
}

template <class T>
Decoder<T> bind_decoder(Binder<T>& bind, const std::string& prefix, std::size_t dim, std::size_t depth,
                        std::size_t heads) {
    Decoder<T> dec;
    dec.heads = heads;
    dec.queries = bind(prefix + ".queries");
    dec.horizon = dec.queries.dim(0);
    dec.blocks.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i)
        dec.blocks.push_back(bind_block(bind, prefix + ".blk" + std::to_string(i), dim, heads));
    return dec;
}

// Q learned queries cross-attend over each spatial position's T historical
// features; positions never mix.
template <class T>
DecodedFuture<T> decode_future(const Decoder<T>& dec, const VfmTokens<T>& hist) {
    if (hist.frames < 1) fail(ErrorCode::Invalid, "decoder needs at least one historical frame");
    const std::size_t steps = hist.frames, n_s = hist.per_frame, dim = hist.dim;
    // regroup t-major history to n-major so each position's past is contiguous
    auto z = reshape(transpose(reshape(hist.values, {steps, n_s, dim}), 0, 1), {n_s * steps, dim});
    std::vector<Tensor<T>> per_position;
    per_position.reserve(n_s);
    for (std::size_t n = 0; n < n_s; ++n) {
        auto past = slice(z, 0, n * steps, steps);
        auto x = dec.queries;
        for (const auto& blk : dec.blocks) {
            x = add(x, multi_head_attention(blk.attn, layer_norm(x, static_cast<T>(kLnEps)), past));
            x = add(x, feed_forward(blk, layer_norm(x, static_cast<T>(kLnEps))));
        }
        per_position.push_back(x);
    }
    return {concat(per_position, 0), dec.horizon, n_s, dim};
}

// ---- output heads ----

inline void register_head(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t patch_dim,
                          Rng& rng, const std::string& group = "heads") {
    register_linear(store, prefix + ".w", dim, patch_dim, rng, false, group);
    register_zeros(store, prefix + ".b", {patch_dim}, false, group);
}

template <class T>
struct Head {
    Tensor<T> w, b;  // D -> P_s^2*C
};

template <class T>
Head<T> bind_head(Binder<T>& bind, const std::string& prefix) {
    return Head<T>{bind(prefix + ".w"), bind(prefix + ".b")};
}

// Linear head to patch pixels, regrouped t-major, then unpatchified into
// [Q x C x H x W] predicted frames.
template <class T>
Tensor<T> head_project(const Head<T>& head, const DecodedFuture<T>& future, const PatchGeometry& g) {
    const std::size_t n_s = future.per_frame, q = future.horizon;
    if (n_s != g.per_frame())
        fail(ErrorCode::ShapeMismatch, "decoder produced " + std::to_string(n_s) + " positions, geometry expects " +
                                           std::to_string(g.per_frame()));
    auto y = add_bias(matmul(future.values, head.w), head.b);  // [N_s*Q x P^2C]
    const std::size_t pc = g.token_dim();
    auto t_major = reshape(transpose(reshape(y, {n_s, q, pc}), 0, 1), {q * n_s, pc});
    return unpatchify(t_major, q, g);
}

}  // namespace stvfm
