#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stvfm/backbone.hpp"
#include "stvfm/coordination.hpp"

// Full dual-branch model assembly. The raw (ST) branch and the
// temporal-difference (Flow) branch each own a tokenizer, temporal encoder,
// positional embedding, decoder, and head; the frozen backbone is shared.
// Ablation flags carve out the reduced variants:
//   v1   use_vfm only: linear embed -> frozen backbone -> per-position MLP
//   v2   + token adaptation (D_T bottleneck + transformer decoder)
//   v3   + temporal context encoder
//   v4   + backbone adapters
//   full + flow branch + cross-prompt coordination

namespace stvfm {

struct ModelConfig {
    std::size_t channels = 1, height = 16, width = 20;
    std::size_t patch = 2;             // P_s
    std::size_t hist = 6, horizon = 6; // P, Q
    std::size_t d_t = 64, d_vfm = 64;
    std::size_t temporal_depth = 3, temporal_heads = 4;
    std::size_t decoder_depth = 3, decoder_heads = 4;
    std::size_t mlp_hidden = 256;
    BackboneConfig backbone;
    CoordinationConfig coordination;
    bool use_vfm = true, use_token_adaptation = true, use_temporal_encoder = true;
    bool use_adapters = false, use_flow_branch = true, use_cross_prompt = true;
    std::uint64_t seed = 42;
};

inline void apply_ablation_variant(ModelConfig& cfg, const std::string& name) {
    cfg.use_vfm = true;
    cfg.use_token_adaptation = cfg.use_temporal_encoder = cfg.use_adapters = false;
    cfg.use_flow_branch = cfg.use_cross_prompt = false;
    if (name == "v1") return;
    cfg.use_token_adaptation = true;
    if (name == "v2") return;
    cfg.use_temporal_encoder = true;
    if (name == "v3") return;
    cfg.use_adapters = true;
    if (name == "v4") return;
    if (name == "full") {
        cfg.use_flow_branch = cfg.use_cross_prompt = true;
        return;
    }
    fail(ErrorCode::Invalid, "unknown ablation variant '" + name + "' (v1, v2, v3, v4, full)");
}

inline PatchGeometry model_geometry(const ModelConfig& cfg) {
    return make_patch_geometry(cfg.channels, cfg.height, cfg.width, cfg.patch);
}

inline std::vector<std::string> model_config_problems(const ModelConfig& cfg) {
    std::vector<std::string> out;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) out.push_back(msg);
    };
    check(cfg.channels >= 1 && cfg.height >= 1 && cfg.width >= 1, "grid dims must all be at least 1");
    check(cfg.patch >= 1, "patch side must be at least 1");
    check(cfg.hist >= 1, "history length P must be at least 1");
    check(cfg.horizon >= 1, "horizon Q must be at least 1");
    check(cfg.d_t >= 1 && cfg.d_vfm >= 1, "embedding dims must be at least 1");
    check(cfg.temporal_heads >= 1 && cfg.d_t % cfg.temporal_heads == 0,
          "d_t must divide into temporal_heads");
    check(cfg.decoder_heads >= 1 && cfg.d_vfm % cfg.decoder_heads == 0,
          "d_vfm must divide into decoder_heads");
    check(cfg.temporal_depth >= 1, "temporal_depth must be at least 1");
    check(cfg.decoder_depth >= 1, "decoder_depth must be at least 1");
    check(cfg.mlp_hidden >= 1, "mlp_hidden must be at least 1");
    if (cfg.use_vfm) {
        check(cfg.backbone.dim == cfg.d_vfm, "backbone dim must equal d_vfm");
        check(cfg.backbone.depth >= 1, "backbone depth must be at least 1");
        check(cfg.backbone.heads >= 1 && cfg.backbone.dim % cfg.backbone.heads == 0,
              "backbone dim must divide into its heads");
        if (cfg.use_adapters)
            check(cfg.backbone.adapter_bottleneck >= 1 && cfg.backbone.adapter_bottleneck < cfg.backbone.dim,
                  "adapter bottleneck must be in [1, backbone dim)");
    } else {
        check(!cfg.use_adapters, "adapters require the backbone (use_vfm)");
    }
    if (cfg.use_cross_prompt) {
        check(cfg.use_flow_branch, "cross-prompt coordination requires the flow branch");
        check(cfg.coordination.layers >= 1, "coordination needs at least one layer");
        check(cfg.coordination.heads >= 1 && cfg.d_vfm % cfg.coordination.heads == 0,
              "d_vfm must divide into coordination heads");
    }
    return out;
}

inline void validate_model_config(const ModelConfig& cfg) {
    auto problems = model_config_problems(cfg);
    if (problems.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    fail(ErrorCode::Config, msg);
}

namespace detail {

inline void register_branch(ParamStore& store, const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
    const PatchGeometry g = model_geometry(cfg);
    const std::size_t pc = g.token_dim();
    if (!cfg.use_token_adaptation) {
        register_linear(store, prefix + ".w_in", pc, cfg.d_vfm, rng, false, "tokenizer");
    } else {
        if (cfg.use_temporal_encoder)
            register_temporal_encoder(store, prefix + ".te", pc, cfg.d_t, cfg.hist, cfg.temporal_depth, rng);
        else
            register_linear(store, prefix + ".w_proj", pc, cfg.d_t, rng, false, "tokenizer");
        register_linear(store, prefix + ".w_adapt", cfg.d_t, cfg.d_vfm, rng, false, "tokenizer");
    }
    std::vector<float> e_pos(g.per_frame() * cfg.d_vfm);
    for (auto& v : e_pos) v = 0.02f * rng.normal();
    store.add(prefix + ".e_pos", {g.per_frame(), cfg.d_vfm}, std::move(e_pos), false, "tokenizer");

    if (cfg.use_token_adaptation) {
        register_decoder(store, prefix + ".dec", cfg.d_vfm, cfg.horizon, cfg.decoder_depth, rng);
        register_head(store, prefix + ".head", cfg.d_vfm, pc, rng);
    } else {
        register_linear(store, prefix + ".mlp.w1", cfg.hist * cfg.d_vfm, cfg.mlp_hidden, rng, false, "decoder");
        register_zeros(store, prefix + ".mlp.b1", {cfg.mlp_hidden}, false, "decoder");
        register_linear(store, prefix + ".mlp.w2", cfg.mlp_hidden, cfg.horizon * pc, rng, false, "heads");
        register_zeros(store, prefix + ".mlp.b2", {cfg.horizon * pc}, false, "heads");
    }
}

}  // namespace detail

inline void register_model(ParamStore& store, const ModelConfig& cfg) {
    validate_model_config(cfg);
    Rng rng(cfg.seed);
    detail::register_branch(store, cfg, "st", rng);
    if (cfg.use_flow_branch) detail::register_branch(store, cfg, "flow", rng);
    if (cfg.use_cross_prompt) register_coordination(store, "coord", cfg.d_vfm, cfg.coordination, rng);
    if (cfg.use_vfm) {
        BackboneConfig bb = cfg.backbone;
        bb.adapters_enabled = cfg.use_adapters;
        register_backbone(store, bb);
    }
}

template <class T>
struct BranchParams {
    Tensor<T> w_in;                         // v1 path
    std::optional<TemporalEncoder<T>> te;   // v3+
    Tensor<T> w_proj;                       // v2 (adaptation without temporal blocks)
    Tensor<T> w_adapt;
    Tensor<T> e_pos;
    std::optional<Decoder<T>> dec;
    std::optional<Head<T>> head;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // v1 decoder
};

template <class T>
struct Model {
    ModelConfig cfg;
    PatchGeometry geom;
    BranchParams<T> st, flow;
    std::optional<Backbone<T>> backbone;
    std::optional<Coordinator<T>> coordination;
};

namespace detail {

template <class T>
BranchParams<T> bind_branch(Binder<T>& bind, const ModelConfig& cfg, const std::string& prefix) {
    BranchParams<T> b;
    if (!cfg.use_token_adaptation) {
        b.w_in = bind(prefix + ".w_in");
    } else {
        if (cfg.use_temporal_encoder)
            b.te = bind_temporal_encoder(bind, prefix + ".te", cfg.hist, cfg.temporal_depth, cfg.temporal_heads);
        else
            b.w_proj = bind(prefix + ".w_proj");
        b.w_adapt = bind(prefix + ".w_adapt");
    }
    b.e_pos = bind(prefix + ".e_pos");
    if (cfg.use_token_adaptation) {
        b.dec = bind_decoder(bind, prefix + ".dec", cfg.d_vfm, cfg.decoder_depth, cfg.decoder_heads);
        b.head = bind_head(bind, prefix + ".head");
    } else {
        b.mlp_w1 = bind(prefix + ".mlp.w1");
        b.mlp_b1 = bind(prefix + ".mlp.b1");
        b.mlp_w2 = bind(prefix + ".mlp.w2");
        b.mlp_b2 = bind(prefix + ".mlp.b2");
    }
    return b;
}

}  // namespace detail

template <class T>
Model<T> bind_model(Binder<T>& bind, const ModelConfig& cfg) {
    validate_model_config(cfg);
    Model<T> m;
    m.cfg = cfg;
    m.geom = model_geometry(cfg);
    m.st = detail::bind_branch(bind, cfg, "st");
    if (cfg.use_flow_branch) m.flow = detail::bind_branch(bind, cfg, "flow");
    if (cfg.use_cross_prompt) m.coordination = bind_coordination(bind, "coord", cfg.d_vfm, cfg.coordination);
    if (cfg.use_vfm) {
        BackboneConfig bb = cfg.backbone;
        bb.adapters_enabled = cfg.use_adapters;
        m.backbone = bind_backbone(bind, bb);
    }
    return m;
}

namespace detail {

// frames [P x C x H x W] -> backbone-width tokens, frozen encode included
template <class T>
VfmTokens<T> branch_encode(const Model<T>& m, const BranchParams<T>& b, const Tensor<T>& frames) {
    auto toks = patchify(frames, m.geom);
    VfmTokens<T> v;
    if (!m.cfg.use_token_adaptation) {
        v = VfmTokens<T>{matmul(toks.values, b.w_in), toks.frames, toks.per_frame, m.cfg.d_vfm};
    } else if (m.cfg.use_temporal_encoder) {
        v = token_adapt(temporal_context_encode(*b.te, toks), b.w_adapt);
    } else {
        v = VfmTokens<T>{matmul(matmul(toks.values, b.w_proj), b.w_adapt), toks.frames, toks.per_frame,
                         m.cfg.d_vfm};
    }
    v = add_positional(v, b.e_pos);
    if (m.backbone) v = encode(*m.backbone, v);
    return v;
}

// decoder + head (or the v1 per-position MLP) -> [Q x C x H x W]
template <class T>
Tensor<T> branch_predict(const Model<T>& m, const BranchParams<T>& b, const VfmTokens<T>& feats) {
    if (b.dec) return head_project(*b.head, decode_future(*b.dec, feats), m.geom);
    const std::size_t n_s = feats.per_frame, steps = feats.frames, d = feats.dim;
    const std::size_t pc = m.geom.token_dim(), q = m.cfg.horizon;
    // concat each position's frame features: [N_s x P*D]
    auto per_pos = reshape(transpose(reshape(feats.values, {steps, n_s, d}), 0, 1), {n_s, steps * d});
    auto h = gelu(add_bias(matmul(per_pos, b.mlp_w1), b.mlp_b1));
    auto y = add_bias(matmul(h, b.mlp_w2), b.mlp_b2);  // [N_s x Q*pc]
    auto t_major = reshape(transpose(reshape(y, {n_s, q, pc}), 0, 1), {q * n_s, pc});
    return unpatchify(t_major, q, m.geom);
}

}  // namespace detail

template <class T>
struct Forecast {
    Tensor<T> st;    // [Q x C x H x W]
    Tensor<T> flow;  // present iff the flow branch is enabled
    bool has_flow = false;
};

template <class T>
Forecast<T> model_forward(const Model<T>& m, const Tensor<T>& history, const Tensor<T>& flow_history) {
    if (history.rank() != 4 || history.dim(0) != m.cfg.hist)
        fail(ErrorCode::ShapeMismatch, "model expects " + std::to_string(m.cfg.hist) + " history frames, got " +
                                           shape_str(history.shape()));
    if (m.cfg.use_flow_branch && history.shape() != flow_history.shape())
        fail(ErrorCode::ShapeMismatch, "flow history " + shape_str(flow_history.shape()) +
                                           " does not match history " + shape_str(history.shape()));
    Forecast<T> out;
    auto st_feats = detail::branch_encode(m, m.st, history);
    if (m.cfg.use_flow_branch) {
        auto flow_feats = detail::branch_encode(m, m.flow, flow_history);
        if (m.coordination) {
            auto [s, f] = coordinate(*m.coordination, st_feats, flow_feats);
            st_feats = s;
            flow_feats = f;
        }
        out.flow = detail::branch_predict(m, m.flow, flow_feats);
        out.has_flow = true;
    }
    out.st = detail::branch_predict(m, m.st, st_feats);
    return out;
}

}  // namespace stvfm
