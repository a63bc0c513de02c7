#pragma once

#include <cstdint>
#include <string>

// Little-endian integer codecs shared by the binary file formats.

namespace stvfm::wire {

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const std::string& buf, std::size_t off) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(buf[off]) |
                                      (static_cast<unsigned char>(buf[off + 1]) << 8));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

}  // namespace stvfm::wire
