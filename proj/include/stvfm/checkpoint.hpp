#pragma once

#include <string>

#include <json.hpp>

#include "stvfm/params.hpp"

// NTC1 named-tensor container: magic "NTC1", version u32, count u32, then per
// tensor {name length u16, name utf-8, flags u8 (bit0 = frozen), rank u8,
// dims u32[rank], payload f32 little-endian}, followed by a trailing JSON
// blob. Entry order is the store's insertion order, so a round trip is
// byte-identical. Group labels travel in the JSON under "groups".

namespace stvfm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamStore& store, const nlohmann::json& meta, const std::string& path);

struct LoadedCheckpoint {
    ParamStore store;
    nlohmann::json meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace stvfm
