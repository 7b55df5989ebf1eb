#pragma once

// En-face flow mapping: run a trained network over a structure volume
// B-scan by B-scan, then collapse the retinal band to a 2D map.

#include <octflow/band.hpp>
#include <octflow/errors.hpp>
#include <octflow/model.hpp>
#include <octflow/rng.hpp>
#include <octflow/tensor.hpp>
#include <octflow/volume.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace octflow {

// metric: non-overlapping strips, exact tiling, for quantitative evaluation.
// display: strips overlap by a fixed margin and are feather-blended across
// seams, for rendered maps where tiling artifacts would distract.
enum class InferMode { metric, display };

inline const char* infer_mode_name(InferMode m) {
    return m == InferMode::metric ? "metric" : "display";
}

inline InferMode infer_mode_from_name(const std::string& s) {
    if (s == "metric") return InferMode::metric;
    if (s == "display") return InferMode::display;
    throw ConfigError("unknown inference mode '" + s + "'");
}

namespace detail {

constexpr std::size_t kSeamOverlap = 8;

// Strip offsets covering [0, width). Metric mode requires an exact tiling;
// display mode advances by strip_w - overlap and clamps the final strip to
// the right edge.
inline std::vector<std::size_t> strip_offsets(std::size_t width, std::size_t strip_w,
                                              InferMode mode) {
    std::vector<std::size_t> offs;
    if (mode == InferMode::metric) {
        for (std::size_t c = 0; c + strip_w <= width; c += strip_w) offs.push_back(c);
        return offs;
    }
    const std::size_t stride = strip_w - kSeamOverlap;
    std::size_t c = 0;
    while (true) {
        offs.push_back(c);
        if (c + strip_w >= width) break;
        c = std::min(c + stride, width - strip_w);
    }
    return offs;
}

// Feather weight for a strip-local column. Ramps linearly over the seam
// overlap on sides that have a neighbour; edges of the volume stay at 1.
inline double feather_weight(std::size_t col, std::size_t strip_w, bool has_left,
                             bool has_right) {
    double w = 1.0;
    const double ramp = double(kSeamOverlap + 1);
    if (has_left) w = std::min(w, double(col + 1) / ramp);
    if (has_right) w = std::min(w, double(strip_w - col) / ramp);
    return w;
}

}  // namespace detail

// Runs the network over every B-scan of a structure volume and reassembles
// the per-strip outputs into an inferred volume, clipped to [0,1]. Each
// slice is processed independently, so slice order and inference commute.
inline Volume infer_volume(const Network<float>& net, const Volume& structure,
                           std::size_t strip_w, InferMode mode = InferMode::metric) {
    if (structure.kind != VolumeKind::structure) {
        throw DomainError("inference input must be a structure volume, got kind '" +
                          std::string(volume_kind_name(structure.kind)) + "'");
    }
    const std::size_t H = structure.height;
    const std::size_t W = structure.width;
    const std::size_t d = std::size_t(net.spec().divisor());
    if (strip_w == 0 || strip_w > W) {
        throw ShapeError("strip width " + std::to_string(strip_w) +
                         " does not fit volume width " + std::to_string(W));
    }
    if (H % d != 0 || strip_w % d != 0) {
        throw ShapeError("inference tile " + std::to_string(H) + "x" + std::to_string(strip_w) +
                         " not divisible by network factor " + std::to_string(d));
    }
    if (mode == InferMode::metric && W % strip_w != 0) {
        throw ShapeError("volume width " + std::to_string(W) +
                         " is not an exact multiple of strip width " + std::to_string(strip_w));
    }
    if (mode == InferMode::display && strip_w <= detail::kSeamOverlap) {
        throw ShapeError("strip width " + std::to_string(strip_w) +
                         " must exceed the seam overlap of " +
                         std::to_string(detail::kSeamOverlap));
    }

    const auto offs = detail::strip_offsets(W, strip_w, mode);
    const int n = static_cast<int>(offs.size());

    Volume out = make_volume(structure.slices, H, W, VolumeKind::inferred);
    out.meta = structure.meta;
    out.meta["generator"] = "inference";
    out.meta["infer_mode"] = infer_mode_name(mode);

    Tensor4<float> x(n, 1, static_cast<int>(H), static_cast<int>(strip_w));
    std::vector<double> acc, wacc;
    for (std::size_t s = 0; s < structure.slices; ++s) {
        for (int k = 0; k < n; ++k) {
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t c = 0; c < strip_w; ++c) {
                    x.at(k, 0, static_cast<int>(h), static_cast<int>(c)) =
                        structure.at(s, h, offs[std::size_t(k)] + c);
                }
            }
        }
        const Tensor4<float> y = net.infer(x);

        if (mode == InferMode::metric) {
            for (int k = 0; k < n; ++k) {
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t c = 0; c < strip_w; ++c) {
                        const float v = y.at(k, 0, static_cast<int>(h), static_cast<int>(c));
                        out.at(s, h, offs[std::size_t(k)] + c) = std::clamp(v, 0.0f, 1.0f);
                    }
                }
            }
        } else {
            acc.assign(H * W, 0.0);
            wacc.assign(W, 0.0);
            for (int k = 0; k < n; ++k) {
                const bool has_left = offs[std::size_t(k)] > 0;
                const bool has_right = offs[std::size_t(k)] + strip_w < W;
                for (std::size_t c = 0; c < strip_w; ++c) {
                    const double w = detail::feather_weight(c, strip_w, has_left, has_right);
                    wacc[offs[std::size_t(k)] + c] += w;
                    for (std::size_t h = 0; h < H; ++h) {
                        acc[h * W + offs[std::size_t(k)] + c] +=
                            w * double(y.at(k, 0, static_cast<int>(h), static_cast<int>(c)));
                    }
                }
            }
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t c = 0; c < W; ++c) {
                    const double v = acc[h * W + c] / wacc[c];
                    out.at(s, h, c) = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
                }
            }
        }
    }
    return out;
}

// Depth-collapse rule for the 2D map.
enum class Projection { average, max };

inline const char* projection_name(Projection p) {
    return p == Projection::average ? "average" : "max";
}

inline Projection projection_from_name(const std::string& s) {
    if (s == "average") return Projection::average;
    if (s == "max") return Projection::max;
    throw ConfigError("unknown projection '" + s + "'");
}

// 2D en-face map: one value per (slice, lateral) column, collapsed over the
// band's depth interval. Values inherit the volume's [0,1] range.
struct EnFaceMap {
    std::size_t slices = 0;
    std::size_t width = 0;
    Projection projection = Projection::average;
    VolumeKind source = VolumeKind::structure;
    std::uint64_t source_hash = 0;
    BandMap band;
    std::vector<float> data;

    float& at(std::size_t s, std::size_t w) { return data[s * width + w]; }
    float at(std::size_t s, std::size_t w) const { return data[s * width + w]; }
};

// Constant-interval band covering the same rows in every column, for
// projections that skip detection.
inline BandMap uniform_band(std::size_t slices, std::size_t width, std::uint32_t inner,
                            std::uint32_t outer) {
    if (slices == 0 || width == 0) throw ShapeError("band dimensions must be positive");
    if (inner > outer) {
        throw ConfigError("band is empty: inner row " + std::to_string(inner) +
                          " below outer row " + std::to_string(outer));
    }
    BandMap m;
    m.slices = slices;
    m.width = width;
    m.inner.assign(slices * width, inner);
    m.outer.assign(slices * width, outer);
    m.fallback.assign(slices * width, 0);
    m.any_fallback = false;
    return m;
}

inline EnFaceMap enface(const Volume& v, const BandMap& band, Projection kind) {
    if (band.slices != v.slices || band.width != v.width) {
        throw ShapeError("band grid " + std::to_string(band.slices) + "x" +
                         std::to_string(band.width) + " does not match volume " +
                         std::to_string(v.slices) + "x" + std::to_string(v.width));
    }
    EnFaceMap map;
    map.slices = v.slices;
    map.width = v.width;
    map.projection = kind;
    map.source = v.kind;
    map.band = band;
    map.data.assign(v.slices * v.width, 0.0f);

    for (std::size_t s = 0; s < v.slices; ++s) {
        for (std::size_t w = 0; w < v.width; ++w) {
            const std::size_t i = band.idx(s, w);
            const std::uint32_t lo = band.inner[i];
            const std::uint32_t hi = band.outer[i];
            if (lo > hi) {
                throw ConfigError("band is empty at slice " + std::to_string(s) + " column " +
                                  std::to_string(w));
            }
            if (hi >= v.height) {
                throw ConfigError("band row " + std::to_string(hi) + " exceeds volume depth " +
                                  std::to_string(v.height));
            }
            if (kind == Projection::average) {
                double sum = 0.0;
                for (std::uint32_t h = lo; h <= hi; ++h) sum += double(v.at(s, h, w));
                map.at(s, w) = static_cast<float>(sum / double(hi - lo + 1));
            } else {
                float best = v.at(s, lo, w);
                for (std::uint32_t h = lo + 1; h <= hi; ++h) best = std::max(best, v.at(s, h, w));
                map.at(s, w) = best;
            }
        }
    }

    const char* bytes = reinterpret_cast<const char*>(v.data.data());
    map.source_hash = fnv1a64(std::string_view(bytes, v.data.size() * sizeof(float)));
    return map;
}

// Writes <prefix>.pgm (16-bit) plus <prefix>.txt describing how the map was
// produced: projection rule, source volume kind and content hash, band range.
inline void save_enface(const std::string& path_prefix, const EnFaceMap& map) {
    if (map.data.empty()) throw ShapeError("cannot save an empty map");
    save_pgm16(path_prefix + ".pgm", map.slices, map.width, map.data.data());

    std::uint32_t band_lo = map.band.inner.empty() ? 0 : map.band.inner[0];
    std::uint32_t band_hi = map.band.outer.empty() ? 0 : map.band.outer[0];
    for (std::size_t i = 0; i < map.band.inner.size(); ++i) {
        band_lo = std::min(band_lo, map.band.inner[i]);
        band_hi = std::max(band_hi, map.band.outer[i]);
    }

    const std::string path = path_prefix + ".txt";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("'" + path + "': cannot open for writing");
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(map.source_hash));
    f << "octflow-enface 1\n";
    f << "projection " << projection_name(map.projection) << "\n";
    f << "source " << volume_kind_name(map.source) << "\n";
    f << "slices " << map.slices << "\n";
    f << "width " << map.width << "\n";
    f << "band_min " << band_lo << "\n";
    f << "band_max " << band_hi << "\n";
    f << "band_fallback " << (map.band.any_fallback ? 1 : 0) << "\n";
    f << "source_hash " << hash << "\n";
    if (!f) throw IoError("'" + path + "': write failed");
}

}  // namespace octflow
