#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stvfm/checkpoint.hpp"
#include "stvfm/nn.hpp"
#include "stvfm/token_adapter.hpp"

// Frozen vision-transformer stand-in. "Pretrained" is simulated by freezing a
// seeded random transformer; both input branches run through the same
// instance. Attention mixes tokens within one frame only: frames behave as
// independent batch items.

namespace stvfm {

struct BackboneConfig {
    std::size_t depth = 4, dim = 64, heads = 4;
    bool adapters_enabled = false;
    std::size_t adapter_bottleneck = 8;
    std::uint64_t seed = 1337;
};

void validate_backbone_config(const BackboneConfig& cfg);

// Registers frozen block weights "backbone.blk{i}.*" and, when enabled,
// trainable adapters "backbone.blk{i}.adapter.*".
void register_backbone(ParamStore& store, const BackboneConfig& cfg);

template <class T>
struct Backbone {
    BackboneConfig cfg;
    std::vector<TransformerBlock<T>> blocks;
    std::vector<Adapter<T>> adapters;  // empty unless cfg.adapters_enabled
};

template <class T>
Backbone<T> bind_backbone(Binder<T>& bind, const BackboneConfig& cfg) {
    validate_backbone_config(cfg);
    Backbone<T> b;
    b.cfg = cfg;
    b.blocks.reserve(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string prefix = "backbone.blk" + std::to_string(i);
        b.blocks.push_back(bind_block(bind, prefix, cfg.dim, cfg.heads));
        if (cfg.adapters_enabled) b.adapters.push_back(bind_adapter(bind, prefix + ".adapter"));
    }
    return b;
}

template <class T>
VfmTokens<T> encode(const Backbone<T>& b, const VfmTokens<T>& tokens) {
    if (tokens.dim != b.cfg.dim)
        fail(ErrorCode::ShapeMismatch, "backbone width is " + std::to_string(b.cfg.dim) + ", tokens carry dim " +
                                           std::to_string(tokens.dim));
    std::vector<Tensor<T>> frames;
    frames.reserve(tokens.frames);
    for (std::size_t t = 0; t < tokens.frames; ++t) {
        auto x = slice(tokens.values, 0, t * tokens.per_frame, tokens.per_frame);
        for (std::size_t i = 0; i < b.blocks.size(); ++i)
            x = transformer_block(b.blocks[i], x, b.adapters.empty() ? nullptr : &b.adapters[i]);
        frames.push_back(x);
    }
    return {concat(frames, 0), tokens.frames, tokens.per_frame, tokens.dim};
}

// ---- persistence / frozen-ness enforcement ----

void save_backbone(const ParamStore& store, const BackboneConfig& cfg, const std::string& path);

// Loads and validates every expected tensor against cfg; mismatches name the
// offending tensor.
ParamStore load_backbone(const std::string& path, const BackboneConfig& cfg);

struct FrozenReport {
    bool ok = true;
    std::vector<std::string> changed;  // names of frozen tensors that moved
};

// Bitwise snapshot of the frozen subset, for assert_frozen after training.
std::vector<ParamEntry> frozen_snapshot(const ParamStore& store);

FrozenReport assert_frozen(const std::vector<ParamEntry>& before, const ParamStore& after);

}  // namespace stvfm
