#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "octflow/errors.hpp"
#include "octflow/volume.hpp"

namespace octflow {

// Per-A-scan depth interval [inner, outer] (rows, inclusive) of the bright
// retina band, one entry per (slice, width) position. `fallback` marks
// A-scans where no band was detectable and the nominal interval was used.
struct BandMap {
    std::size_t slices = 0;
    std::size_t width = 0;
    std::vector<std::uint32_t> inner;
    std::vector<std::uint32_t> outer;
    std::vector<std::uint8_t> fallback;
    bool any_fallback = false;

    std::size_t idx(std::size_t s, std::size_t w) const { return s * width + w; }
};

namespace detail {

inline void nominal_band_rows(std::size_t height, double inner_frac, double outer_frac,
                              std::uint32_t& inner_row, std::uint32_t& outer_row) {
    const auto lo = std::size_t(std::floor(inner_frac * double(height)));
    std::size_t hi = std::size_t(std::ceil(outer_frac * double(height)));
    if (hi > 0) hi -= 1;
    inner_row = std::uint32_t(std::min(lo, height - 1));
    outer_row = std::uint32_t(std::min(std::max(hi, lo), height - 1));
}

} // namespace detail

// Locates the bright band per A-scan by thresholding a laterally and axially
// smoothed depth profile. A-scans with contrast below a floor fall back to the
// nominal [inner_frac, outer_frac] interval and are flagged.
inline BandMap retina_band(const Volume& structure, double nominal_inner_frac = 0.25,
                           double nominal_outer_frac = 0.75) {
    if (!(nominal_inner_frac > 0.0 && nominal_inner_frac < nominal_outer_frac &&
          nominal_outer_frac < 1.0)) {
        throw ConfigError("nominal band fractions must satisfy 0 < inner < outer < 1");
    }
    const std::size_t S = structure.slices, H = structure.height, W = structure.width;
    BandMap map;
    map.slices = S;
    map.width = W;
    map.inner.assign(S * W, 0);
    map.outer.assign(S * W, 0);
    map.fallback.assign(S * W, 0);

    std::uint32_t nominal_in = 0, nominal_out = 0;
    detail::nominal_band_rows(H, nominal_inner_frac, nominal_outer_frac, nominal_in, nominal_out);

    constexpr std::size_t lateral_halfwin = 2;
    constexpr double contrast_floor = 0.08;
    constexpr double threshold_frac = 0.4;

    std::vector<double> profile(H), smooth(H);
    for (std::size_t s = 0; s < S; ++s) {
        const float* plane = structure.plane(s);
        for (std::size_t w = 0; w < W; ++w) {
            const std::size_t w0 = w >= lateral_halfwin ? w - lateral_halfwin : 0;
            const std::size_t w1 = std::min(W - 1, w + lateral_halfwin);
            for (std::size_t h = 0; h < H; ++h) {
                double acc = 0.0;
                for (std::size_t x = w0; x <= w1; ++x) acc += plane[h * W + x];
                profile[h] = acc / double(w1 - w0 + 1);
            }
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t h0 = h > 0 ? h - 1 : 0;
                const std::size_t h1 = std::min(H - 1, h + 1);
                smooth[h] = (profile[h0] + profile[h] + profile[h1]) / 3.0;
            }
            const auto [lo_it, hi_it] = std::minmax_element(smooth.begin(), smooth.end());
            const double lo = *lo_it, hi = *hi_it;
            const std::size_t i = map.idx(s, w);
            if (hi - lo < contrast_floor) {
                map.inner[i] = nominal_in;
                map.outer[i] = nominal_out;
                map.fallback[i] = 1;
                map.any_fallback = true;
                continue;
            }
            const double thr = lo + threshold_frac * (hi - lo);
            std::size_t first = 0;
            while (first < H && smooth[first] < thr) ++first;
            std::size_t last = H - 1;
            while (last > first && smooth[last] < thr) --last;
            map.inner[i] = std::uint32_t(first);
            map.outer[i] = std::uint32_t(last);
        }
    }
    return map;
}

// Zeroes voxels outside the band interval; used to restrict flow targets to
// the retina.
inline void apply_band_mask(Volume& v, const BandMap& map) {
    if (v.slices != map.slices || v.width != map.width) {
        throw ShapeError("band map dims do not match volume");
    }
    for (std::size_t s = 0; s < v.slices; ++s) {
        for (std::size_t w = 0; w < v.width; ++w) {
            const std::size_t i = map.idx(s, w);
            for (std::size_t h = 0; h < v.height; ++h) {
                if (h < map.inner[i] || h > map.outer[i]) v.at(s, h, w) = 0.0f;
            }
        }
    }
}

// Mean band midpoint row of one B-scan; anchors full-height strip extraction.
inline double band_midpoint_row(const BandMap& map, std::size_t slice) {
    double acc = 0.0;
    for (std::size_t w = 0; w < map.width; ++w) {
        const std::size_t i = map.idx(slice, w);
        acc += 0.5 * (double(map.inner[i]) + double(map.outer[i]));
    }
    return acc / double(map.width);
}

} // namespace octflow
