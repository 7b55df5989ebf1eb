#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "octflow/errors.hpp"
#include "octflow/params.hpp"

namespace octflow {

enum class VolumeKind : std::uint32_t { structure = 0, flow = 1, inferred = 2 };

inline const char* volume_kind_name(VolumeKind k) {
    switch (k) {
        case VolumeKind::structure: return "structure";
        case VolumeKind::flow: return "flow";
        case VolumeKind::inferred: return "inferred";
    }
    return "?";
}

inline VolumeKind volume_kind_from_name(const std::string& s) {
    if (s == "structure") return VolumeKind::structure;
    if (s == "flow") return VolumeKind::flow;
    if (s == "inferred") return VolumeKind::inferred;
    throw ConfigError("unknown volume kind '" + s + "'");
}

// A stack of B-scans: `slices` planes of height x width scalars in [0,1],
// stored plane-major (slice, row, column). `meta` carries provenance
// (generator seed, config hash, source id, ...) as flat string pairs.
struct Volume {
    std::size_t slices = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    VolumeKind kind = VolumeKind::structure;
    std::map<std::string, std::string> meta;
    std::vector<float> data;

    std::size_t voxels() const { return slices * height * width; }

    float* plane(std::size_t s) { return data.data() + s * height * width; }
    const float* plane(std::size_t s) const { return data.data() + s * height * width; }

    float& at(std::size_t s, std::size_t h, std::size_t w) {
        return data[(s * height + h) * width + w];
    }
    float at(std::size_t s, std::size_t h, std::size_t w) const {
        return data[(s * height + h) * width + w];
    }
};

inline Volume make_volume(std::size_t s, std::size_t h, std::size_t w, VolumeKind kind) {
    if (s == 0 || h == 0 || w == 0) {
        throw ShapeError("volume dims must be positive, got " + std::to_string(s) + "x" +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    Volume v;
    v.slices = s;
    v.height = h;
    v.width = w;
    v.kind = kind;
    v.data.assign(s * h * w, 0.0f);
    return v;
}

inline void check_congruent(const Volume& a, const Volume& b, const char* what) {
    if (a.slices != b.slices || a.height != b.height || a.width != b.width) {
        throw ShapeError(std::string(what) + ": volume dims differ, " + std::to_string(a.slices) +
                         "x" + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.slices) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
    }
}

namespace detail {

// File layout: 64-byte header, length-prefixed UTF-8 JSON metadata, then raw
// little-endian f32 voxels in (slice, row, column) order.
//   bytes  0..15  magic "OCTFLOW-VOLUME\0\0"
//   bytes 16..19  u32 format version (= 1)
//   bytes 20..31  u32 slices, u32 height, u32 width
//   bytes 32..35  u32 kind
//   bytes 36..39  u32 metadata byte count
//   bytes 40..63  zero padding
inline constexpr char volume_magic[16] = {'O', 'C', 'T', 'F', 'L', 'O', 'W', '-',
                                          'V', 'O', 'L', 'U', 'M', 'E', '\0', '\0'};
inline constexpr std::uint32_t volume_version = 1;

inline void put_u32_le(char* dst, std::uint32_t v) {
    dst[0] = char(v & 0xff);
    dst[1] = char((v >> 8) & 0xff);
    dst[2] = char((v >> 16) & 0xff);
    dst[3] = char((v >> 24) & 0xff);
}

inline std::uint32_t get_u32_le(const char* src) {
    return std::uint32_t(std::uint8_t(src[0])) | (std::uint32_t(std::uint8_t(src[1])) << 8) |
           (std::uint32_t(std::uint8_t(src[2])) << 16) |
           (std::uint32_t(std::uint8_t(src[3])) << 24);
}

} // namespace detail

inline void save_volume(const std::string& path, const Volume& v) {
    if (v.slices == 0 || v.height == 0 || v.width == 0) {
        throw ShapeError("cannot save volume with zero dims to '" + path + "'");
    }
    if (v.data.size() != v.voxels()) {
        throw ShapeError("volume data size " + std::to_string(v.data.size()) +
                         " does not match dims for '" + path + "'");
    }
    const std::uint32_t limit = 0xffffffffu;
    if (v.slices > limit || v.height > limit || v.width > limit) {
        throw ShapeError("volume dims overflow the file format for '" + path + "'");
    }

    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [key, value] : v.meta) meta[key] = value;
    const std::string meta_text = meta.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");

    char header[64] = {};
    std::memcpy(header, detail::volume_magic, 16);
    detail::put_u32_le(header + 16, detail::volume_version);
    detail::put_u32_le(header + 20, std::uint32_t(v.slices));
    detail::put_u32_le(header + 24, std::uint32_t(v.height));
    detail::put_u32_le(header + 28, std::uint32_t(v.width));
    detail::put_u32_le(header + 32, std::uint32_t(v.kind));
    detail::put_u32_le(header + 36, std::uint32_t(meta_text.size()));
    os.write(header, 64);
    os.write(meta_text.data(), std::streamsize(meta_text.size()));
    detail::write_f32_le(os, v.data.data(), v.data.size());
    if (!os) throw IoError("short write to '" + path + "'");
}

inline Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    const auto fail = [&path](const std::string& why) -> void {
        throw IoError("'" + path + "': " + why);
    };

    char header[64];
    is.read(header, 64);
    if (is.gcount() != 64) fail("truncated header");
    if (std::memcmp(header, detail::volume_magic, 16) != 0) fail("bad magic");
    const std::uint32_t version = detail::get_u32_le(header + 16);
    if (version != detail::volume_version) {
        fail("unsupported format version " + std::to_string(version));
    }
    const std::uint32_t s = detail::get_u32_le(header + 20);
    const std::uint32_t h = detail::get_u32_le(header + 24);
    const std::uint32_t w = detail::get_u32_le(header + 28);
    const std::uint32_t kind_raw = detail::get_u32_le(header + 32);
    const std::uint32_t meta_bytes = detail::get_u32_le(header + 36);
    for (int i = 40; i < 64; ++i) {
        if (header[i] != 0) fail("nonzero header padding");
    }
    if (s == 0 || h == 0 || w == 0) fail("zero dimension in header");
    if (kind_raw > 2) fail("unknown kind code " + std::to_string(kind_raw));
    const std::uint64_t voxels = std::uint64_t(s) * h * w;
    if (voxels > (std::uint64_t(1) << 33)) fail("dims overflow sanity bound");

    std::string meta_text(meta_bytes, '\0');
    is.read(meta_text.data(), std::streamsize(meta_bytes));
    if (std::size_t(is.gcount()) != meta_bytes) fail("truncated metadata block");
    nlohmann::json meta = nlohmann::json::parse(meta_text, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) fail("metadata is not a JSON object");

    Volume v = make_volume(s, h, w, VolumeKind(kind_raw));
    for (const auto& [key, value] : meta.items()) {
        if (!value.is_string()) fail("metadata value for '" + key + "' is not a string");
        v.meta[key] = value.get<std::string>();
    }
    detail::read_f32_le(is, v.data.data(), v.data.size());
    if (!is) fail("truncated payload");
    is.peek();
    if (!is.eof()) fail("trailing bytes after payload");

    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float x = v.data[i];
        if (!(x >= 0.0f && x <= 1.0f)) {
            throw DomainError("'" + path + "': voxel " + std::to_string(i) + " = " +
                              std::to_string(x) + " outside [0,1]");
        }
    }
    return v;
}

// Plain binary portable graymaps for quick inspection of B-scans and en-face
// maps. Input scalars are expected in [0,1]; 16-bit samples are big-endian as
// the format requires.
namespace detail {

inline void write_pgm(const std::string& path, std::size_t h, std::size_t w, const float* data,
                      unsigned maxval) {
    if (h == 0 || w == 0) throw ShapeError("pgm dims must be positive for '" + path + "'");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << w << " " << h << "\n" << maxval << "\n";
    for (std::size_t i = 0; i < h * w; ++i) {
        const float x = std::isfinite(data[i]) ? std::clamp(data[i], 0.0f, 1.0f) : 0.0f;
        const unsigned q = unsigned(std::lround(double(x) * maxval));
        if (maxval > 255) {
            const char b[2] = {char((q >> 8) & 0xff), char(q & 0xff)};
            os.write(b, 2);
        } else {
            const char b = char(q & 0xff);
            os.write(&b, 1);
        }
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

} // namespace detail

inline void save_pgm8(const std::string& path, std::size_t h, std::size_t w, const float* data) {
    detail::write_pgm(path, h, w, data, 255);
}

inline void save_pgm16(const std::string& path, std::size_t h, std::size_t w, const float* data) {
    detail::write_pgm(path, h, w, data, 65535);
}

} // namespace octflow
