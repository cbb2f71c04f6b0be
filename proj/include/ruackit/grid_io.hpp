#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ruackit/grid.hpp"

namespace ruackit {

// Flat binary grid format: magic "RGRD", u32 rank, u32 extents, then the
// payload as little-endian f64.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

inline std::uint32_t get_u32(const char* p) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24);
}

}  // namespace detail

inline std::string grid_to_bytes(const Grid& g) {
    std::string out;
    out.reserve(8 + 4 * g.rank() + 8 * static_cast<size_t>(g.size()));
    out += "RGRD";
    detail::put_u32(out, static_cast<std::uint32_t>(g.rank()));
    for (int i = 0; i < g.rank(); ++i)
        detail::put_u32(out, static_cast<std::uint32_t>(g.extent(i)));
    for (std::int64_t i = 0; i < g.size(); ++i) {
        double v = g[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int k = 0; k < 8; ++k) out += static_cast<char>((bits >> (8 * k)) & 0xff);
    }
    return out;
}

inline Grid grid_from_bytes(const char* p, size_t n, size_t* consumed = nullptr) {
    if (n < 8 || std::memcmp(p, "RGRD", 4) != 0)
        throw std::runtime_error("grid_from_bytes: bad magic");
    std::uint32_t rank = detail::get_u32(p + 4);
    if (rank < 1 || rank > 4) throw std::runtime_error("grid_from_bytes: bad rank");
    if (n < 8 + 4 * static_cast<size_t>(rank)) throw std::runtime_error("grid_from_bytes: truncated header");
    std::vector<int> shape(rank);
    std::int64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(detail::get_u32(p + 8 + 4 * i));
        count *= shape[i];
    }
    size_t off = 8 + 4 * rank;
    if (n < off + 8 * static_cast<size_t>(count))
        throw std::runtime_error("grid_from_bytes: truncated payload");
    std::vector<double> data(static_cast<size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k)
            bits |= static_cast<std::uint64_t>(
                        static_cast<unsigned char>(p[off + 8 * static_cast<size_t>(i) + k]))
                    << (8 * k);
        std::memcpy(&data[static_cast<size_t>(i)], &bits, 8);
    }
    if (consumed) *consumed = off + 8 * static_cast<size_t>(count);
    return Grid(std::move(shape), std::move(data));
}

inline void save_grid(const std::filesystem::path& path, const Grid& g) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_grid: cannot open " + path.string());
    std::string bytes = grid_to_bytes(g);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("save_grid: write failed for " + path.string());
}

inline Grid load_grid(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_grid: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return grid_from_bytes(bytes.data(), bytes.size());
}

/// FNV-1a over the serialized bytes; used for dataset manifests.
inline std::uint64_t grid_content_hash(const Grid& g) {
    std::string bytes = grid_to_bytes(g);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---- PNG output (visualization only; 8-bit, per-channel min-max scaled) ----

namespace detail {

inline void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, 0);  // placeholder, PNG lengths are big-endian: rewrite below
    size_t len_pos = out.size() - 4;
    std::uint32_t len = static_cast<std::uint32_t>(payload.size());
    out[len_pos + 0] = static_cast<char>((len >> 24) & 0xff);
    out[len_pos + 1] = static_cast<char>((len >> 16) & 0xff);
    out[len_pos + 2] = static_cast<char>((len >> 8) & 0xff);
    out[len_pos + 3] = static_cast<char>(len & 0xff);
    size_t crc_start = out.size();
    out.append(type, 4);
    out += payload;
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(out.data() + crc_start),
                static_cast<uInt>(out.size() - crc_start)));
    char b[4] = {static_cast<char>((crc >> 24) & 0xff), static_cast<char>((crc >> 16) & 0xff),
                 static_cast<char>((crc >> 8) & 0xff), static_cast<char>(crc & 0xff)};
    out.append(b, 4);
}

}  // namespace detail

inline void save_png(const std::filesystem::path& path, const Grid& g) {
    int channels, H, W;
    if (g.rank() == 2) {
        channels = 1;
        H = g.extent(0);
        W = g.extent(1);
    } else if (g.rank() == 3 && (g.extent(0) == 1 || g.extent(0) == 3)) {
        channels = g.extent(0);
        H = g.extent(1);
        W = g.extent(2);
    } else {
        throw std::runtime_error("save_png: expected [H,W], [1,H,W] or [3,H,W]");
    }

    // per-channel min-max normalization to 8 bits
    std::vector<unsigned char> raw(static_cast<size_t>(H) * W * channels);
    for (int c = 0; c < channels; ++c) {
        double lo = 1e300, hi = -1e300;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = g.rank() == 2 ? g.at(y, x) : g.at(c, y, x);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = g.rank() == 2 ? g.at(y, x) : g.at(c, y, x);
                raw[(static_cast<size_t>(y) * W + x) * channels + c] =
                    static_cast<unsigned char>(scale > 0 ? (v - lo) * scale + 0.5 : 0.0);
            }
    }

    // filter byte 0 per scanline, then zlib-compress
    std::string scanlines;
    scanlines.reserve(static_cast<size_t>(H) * (1 + static_cast<size_t>(W) * channels));
    for (int y = 0; y < H; ++y) {
        scanlines += '\0';
        scanlines.append(reinterpret_cast<const char*>(&raw[static_cast<size_t>(y) * W * channels]),
                         static_cast<size_t>(W) * channels);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(scanlines.size()));
    std::string compressed(comp_len, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_len,
                  reinterpret_cast<const Bytef*>(scanlines.data()),
                  static_cast<uLong>(scanlines.size()), 6) != Z_OK)
        throw std::runtime_error("save_png: compression failed");
    compressed.resize(comp_len);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    auto put_be = [&ihdr](std::uint32_t v) {
        ihdr += static_cast<char>((v >> 24) & 0xff);
        ihdr += static_cast<char>((v >> 16) & 0xff);
        ihdr += static_cast<char>((v >> 8) & 0xff);
        ihdr += static_cast<char>(v & 0xff);
    };
    put_be(static_cast<std::uint32_t>(W));
    put_be(static_cast<std::uint32_t>(H));
    ihdr += static_cast<char>(8);                        // bit depth
    ihdr += static_cast<char>(channels == 3 ? 2 : 0);    // color type
    ihdr += '\0';                                        // compression
    ihdr += '\0';                                        // filter
    ihdr += '\0';                                        // interlace
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", compressed);
    detail::png_chunk(out, "IEND", "");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_png: cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace ruackit
