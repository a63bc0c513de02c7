#include "stvfm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <limits>

#include "stvfm/error.hpp"
#include "stvfm/wire.hpp"

namespace stvfm {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Invalid, "cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void need(const std::string& buf, std::size_t off, std::size_t bytes, const std::string& what) {
    if (off + bytes > buf.size())
        fail(ErrorCode::Truncated, "checkpoint truncated while reading " + what + " at offset " +
                                       std::to_string(off) + " (file holds " + std::to_string(buf.size()) +
                                       " bytes)");
}

}  // namespace

void save_checkpoint(const ParamStore& store, const nlohmann::json& meta, const std::string& path) {
    std::string buf = "NTC1";
    wire::put_u32(buf, kCheckpointVersion);
    wire::put_u32(buf, static_cast<std::uint32_t>(store.entries().size()));
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& e : store.entries()) {
        if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
            fail(ErrorCode::Invalid, "tensor name too long: " + e.name);
        if (e.shape.size() > 255) fail(ErrorCode::Invalid, "tensor rank too large: " + e.name);
        wire::put_u16(buf, static_cast<std::uint16_t>(e.name.size()));
        buf += e.name;
        buf.push_back(static_cast<char>(e.frozen ? 1 : 0));
        buf.push_back(static_cast<char>(e.shape.size()));
        for (std::size_t d : e.shape) wire::put_u32(buf, static_cast<std::uint32_t>(d));
        for (float v : e.data) wire::put_u32(buf, std::bit_cast<std::uint32_t>(v));
        if (!e.group.empty()) groups[e.name] = e.group;
    }
    nlohmann::json full = meta;
    full["groups"] = std::move(groups);
    buf += full.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Invalid, "cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::Invalid, "short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    need(buf, 0, 4, "magic");
    if (buf.compare(0, 4, "NTC1") != 0)
        fail(ErrorCode::BadMagic, path + " is not an NTC1 checkpoint");
    need(buf, 4, 8, "header");
    const std::uint32_t version = wire::get_u32(buf, 4);
    if (version != kCheckpointVersion)
        fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                             std::to_string(kCheckpointVersion));
    const std::uint32_t count = wire::get_u32(buf, 8);

    LoadedCheckpoint out;
    std::size_t off = 12;
    for (std::uint32_t i = 0; i < count; ++i) {
        need(buf, off, 2, "tensor name length");
        const std::uint16_t name_len = wire::get_u16(buf, off);
        off += 2;
        need(buf, off, name_len, "tensor name");
        std::string name = buf.substr(off, name_len);
        off += name_len;
        need(buf, off, 2, name + " flags");
        const bool frozen = (static_cast<unsigned char>(buf[off]) & 1) != 0;
        const std::size_t rank = static_cast<unsigned char>(buf[off + 1]);
        off += 2;
        need(buf, off, rank * 4, name + " dims");
        Shape shape(rank);
        std::size_t n = 1;
        for (std::size_t d = 0; d < rank; ++d) {
            shape[d] = wire::get_u32(buf, off);
            off += 4;
            n *= shape[d];
        }
        need(buf, off, n * 4, name + " payload");
        std::vector<float> data(n);
        for (std::size_t j = 0; j < n; ++j) data[j] = std::bit_cast<float>(wire::get_u32(buf, off + j * 4));
        off += n * 4;
        out.store.add(std::move(name), std::move(shape), std::move(data), frozen, "");
    }

    try {
        out.meta = nlohmann::json::parse(buf.substr(off));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, "checkpoint metadata is not valid JSON: " + std::string(e.what()));
    }
    if (out.meta.contains("groups")) {
        for (auto& [name, group] : out.meta.at("groups").items())
            out.store.at(name).group = group.get<std::string>();
        // wire detail only; the caller's meta round-trips unchanged
        out.meta.erase("groups");
    }
    return out;
}

}  // namespace stvfm
