#include "stvfm/backbone.hpp"

#include <cstring>

namespace stvfm {

void validate_backbone_config(const BackboneConfig& cfg) {
    if (cfg.depth < 1) fail(ErrorCode::Invalid, "backbone depth must be at least 1");
    if (cfg.dim < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0)
        fail(ErrorCode::Invalid, "backbone dim " + std::to_string(cfg.dim) + " not divisible by heads " +
                                     std::to_string(cfg.heads));
    if (cfg.adapters_enabled && cfg.adapter_bottleneck >= cfg.dim)
        fail(ErrorCode::Invalid, "adapter bottleneck must be smaller than the backbone dim");
}

void register_backbone(ParamStore& store, const BackboneConfig& cfg) {
    validate_backbone_config(cfg);
    Rng rng(cfg.seed);
    // adapters draw from their own stream so the frozen weights are identical
    // whether or not adapters are enabled
    Rng adapter_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string prefix = "backbone.blk" + std::to_string(i);
        register_block(store, prefix, cfg.dim, rng, true, "backbone");
        if (cfg.adapters_enabled)
            register_adapter(store, prefix + ".adapter", cfg.dim, cfg.adapter_bottleneck, adapter_rng, "adapters");
    }
}

namespace {

struct ExpectedTensor {
    std::string name;
    Shape shape;
};

std::vector<ExpectedTensor> expected_backbone_tensors(const BackboneConfig& cfg) {
    std::vector<ExpectedTensor> out;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "backbone.blk" + std::to_string(i);
        for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
            out.push_back({p + w, {cfg.dim, cfg.dim}});
        out.push_back({p + ".w1", {cfg.dim, 4 * cfg.dim}});
        out.push_back({p + ".b1", {4 * cfg.dim}});
        out.push_back({p + ".w2", {4 * cfg.dim, cfg.dim}});
        out.push_back({p + ".b2", {cfg.dim}});
        if (cfg.adapters_enabled) {
            out.push_back({p + ".adapter.down", {cfg.dim, cfg.adapter_bottleneck}});
            out.push_back({p + ".adapter.up", {cfg.adapter_bottleneck, cfg.dim}});
        }
    }
    return out;
}

}  // namespace

void save_backbone(const ParamStore& store, const BackboneConfig& cfg, const std::string& path) {
    ParamStore subset;
    for (const auto& e : expected_backbone_tensors(cfg)) {
        const auto& entry = store.at(e.name);
        subset.add(entry.name, entry.shape, entry.data, entry.frozen, entry.group);
    }
    nlohmann::json meta = {{"kind", "backbone"},
                           {"depth", cfg.depth},
                           {"dim", cfg.dim},
                           {"heads", cfg.heads},
                           {"adapters_enabled", cfg.adapters_enabled},
                           {"adapter_bottleneck", cfg.adapter_bottleneck},
                           {"seed", cfg.seed}};
    save_checkpoint(subset, meta, path);
}

ParamStore load_backbone(const std::string& path, const BackboneConfig& cfg) {
    validate_backbone_config(cfg);
    auto loaded = load_checkpoint(path);
    for (const auto& e : expected_backbone_tensors(cfg)) {
        if (!loaded.store.has(e.name))
            fail(ErrorCode::ShapeMismatch, "checkpoint is missing tensor " + e.name);
        const auto& entry = loaded.store.at(e.name);
        if (entry.shape != e.shape)
            fail(ErrorCode::ShapeMismatch, "tensor " + e.name + " has shape " + shape_str(entry.shape) +
                                               ", config requires " + shape_str(e.shape));
    }
    return std::move(loaded.store);
}

std::vector<ParamEntry> frozen_snapshot(const ParamStore& store) {
    std::vector<ParamEntry> out;
    for (const auto& e : store.entries())
        if (e.frozen) out.push_back(e);
    return out;
}

FrozenReport assert_frozen(const std::vector<ParamEntry>& before, const ParamStore& after) {
    FrozenReport report;
    for (const auto& b : before) {
        const auto& a = after.at(b.name);
        const bool same = a.data.size() == b.data.size() &&
                          std::memcmp(a.data.data(), b.data.data(), b.data.size() * sizeof(float)) == 0;
        if (!same) {
            report.ok = false;
            report.changed.push_back(b.name);
        }
    }
    return report;
}

}  // namespace stvfm
