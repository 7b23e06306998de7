#pragma once

// Parameter checkpoint container.
//
//   magic    "FTNC-PARAMS\0"                    12 bytes
//   version  u8 (= 1)
//   count    u32 LE                             number of layout entries
//   entries  count x { u32 LE name length, name bytes, u32 LE rows, u32 LE cols }
//   values   f64 LE, layout order, row-major inside each entry

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>

#include "ftncfm/common/errors.hpp"
#include "ftncfm/common/files.hpp"
#include "ftncfm/diffcore/params.hpp"

namespace ftncfm::diff {

inline constexpr std::array<char, 12> kCheckpointMagic = {'F', 'T', 'N', 'C', '-', 'P', 'A', 'R', 'A', 'M', 'S', '\0'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamVector& params) {
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    os.put(static_cast<char>(kCheckpointVersion));
    const auto& entries = params.layout()->entries();
    detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.rows));
        detail::put_u32(os, static_cast<std::uint32_t>(e.cols));
    }
    for (Index i = 0; i < params.size(); ++i) detail::put_f64(os, params[i]);
    if (!os) throw IoError("checkpoint: write failed");
}

inline ParamVector read_checkpoint(std::istream& is) {
    std::array<char, 12> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
        throw IoError("checkpoint: bad magic string");
    const int version = is.get();
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::get_u32(is);
    ParamLayout::Builder builder;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = detail::get_u32(is);
        if (len > (1u << 16)) throw IoError("checkpoint: implausible name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IoError("checkpoint: truncated file");
        const std::uint32_t rows = detail::get_u32(is);
        const std::uint32_t cols = detail::get_u32(is);
        try {
            builder.add(std::move(name), rows, cols);
        } catch (const ContractViolation& e) {
            throw IoError(std::string("checkpoint: bad layout: ") + e.what());
        }
    }
    ParamVector params(builder.build());
    for (Index i = 0; i < params.size(); ++i) params[i] = detail::get_f64(is);
    return params;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    write_checkpoint(os, params);
}

inline ParamVector load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    return read_checkpoint(is);
}

// Reattaches values read from disk to an existing model layout.
inline ParamVector adopt_layout(const LayoutPtr& layout, const ParamVector& loaded) {
    if (!(*loaded.layout() == *layout)) throw IoError("checkpoint layout does not match the model");
    return ParamVector(layout, loaded.values());
}

} // namespace ftncfm::diff
