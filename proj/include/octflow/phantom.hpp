#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "octflow/band.hpp"
#include "octflow/errors.hpp"
#include "octflow/rng.hpp"
#include "octflow/volume.hpp"

namespace octflow {

struct PhantomConfig {
    std::size_t slices = 24;
    std::size_t height = 384;
    std::size_t width = 384;
    std::size_t vessels_min = 3;
    std::size_t vessels_max = 8;
    double caliber_min_px = 4.0;  // vessel diameter range, pixels
    double caliber_max_px = 12.0;
    double band_inner_frac = 0.25; // retina band depth interval, fractions of height
    double band_outer_frac = 0.75;
    double speckle_sigma = 0.35;  // speckle contrast in [0,1]
    double rho = 0.6;             // flow decorrelation strength in (0,1]
    std::size_t repeats = 4;      // acquisitions per position
    double flow_ceiling = 0.005;  // variance mapped to 1.0 in the flow volume
    std::uint64_t seed = 0;

    void validate() const {
        if (slices == 0 || height == 0 || width == 0) {
            throw ConfigError("phantom dims must be positive");
        }
        if (!(band_inner_frac > 0.0 && band_inner_frac < band_outer_frac &&
              band_outer_frac < 1.0)) {
            throw ConfigError("band fractions must satisfy 0 < inner < outer < 1");
        }
        if (vessels_min == 0 || vessels_min > vessels_max) {
            throw ConfigError("vessel count range is empty");
        }
        if (!(caliber_min_px >= 1.0 && caliber_min_px <= caliber_max_px)) {
            throw ConfigError("vessel calibers must be >= 1 px and min <= max");
        }
        if (!(speckle_sigma >= 0.0 && speckle_sigma <= 1.0)) {
            throw ConfigError("speckle contrast must lie in [0,1]");
        }
        if (!(rho > 0.0 && rho <= 1.0)) {
            throw ConfigError("decorrelation strength must lie in (0,1]");
        }
        if (repeats < 2) throw ConfigError("need at least 2 repeats");
        if (!(flow_ceiling > 0.0)) throw ConfigError("flow ceiling must be positive");
    }
};

// One tube: sampled centerline points (slice, depth, width, radius) plus the
// branching order label. `parent` indexes the branch this one sprouted from,
// -1 for trunks.
struct VesselBranch {
    int order = 2;
    int parent = -1;
    std::vector<std::array<double, 4>> points; // s, d, w, r per sample
};

struct VesselTree {
    std::size_t slices = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<VesselBranch> branches;
    // Per-voxel owner order (0 = no vessel; overlaps resolved to the lowest,
    // i.e. largest, order).
    std::vector<std::uint8_t> labels;

    bool in_lumen(std::size_t i) const { return labels[i] != 0; }
    std::size_t lumen_count() const {
        return std::size_t(std::count_if(labels.begin(), labels.end(),
                                         [](std::uint8_t x) { return x != 0; }));
    }
};

struct PhantomOutput {
    Volume structure;
    std::vector<Volume> repeats;
    VesselTree tree;
};

namespace detail {

struct BranchSpec {
    double s0, w0, s1, w1;          // en-face endpoints
    double amp, phase, cycles;      // lateral wobble perpendicular to the chord
    double d0, d1, damp, dphase;    // depth profile
    double r0, r1;                  // radius taper
    int order;
    int parent;
};

inline VesselBranch sample_branch(const BranchSpec& b, std::size_t slices, std::size_t height,
                                  std::size_t width, double d_lo, double d_hi) {
    const double ds = b.s1 - b.s0, dw = b.w1 - b.w0;
    const double len = std::sqrt(ds * ds + dw * dw);
    const double inv = len > 1e-9 ? 1.0 / len : 0.0;
    const double ps = -dw * inv, pw = ds * inv; // unit perpendicular in the en-face plane
    const std::size_t n = std::max<std::size_t>(8, std::size_t(std::ceil(len / 0.35)));

    VesselBranch out;
    out.order = b.order;
    out.parent = b.parent;
    out.points.reserve(n + 1);
    constexpr double two_pi = 6.28318530717958647692;
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = double(i) / double(n);
        const double wob = b.amp * std::sin(b.phase + b.cycles * two_pi * t);
        double s = b.s0 + t * ds + wob * ps;
        double w = b.w0 + t * dw + wob * pw;
        double d = b.d0 + t * (b.d1 - b.d0) + b.damp * std::sin(b.dphase + two_pi * t);
        const double r = b.r0 + t * (b.r1 - b.r0);
        s = std::clamp(s, 0.0, double(slices - 1));
        w = std::clamp(w, 0.0, double(width - 1));
        const double lo = d_lo + r, hi = d_hi - r;
        d = lo <= hi ? std::clamp(d, lo, hi) : 0.5 * (d_lo + d_hi);
        d = std::clamp(d, 0.0, double(height - 1));
        out.points.push_back({s, d, w, r});
    }
    return out;
}

inline void stamp_branch(const VesselBranch& br, std::size_t slices, std::size_t height,
                         std::size_t width, std::vector<std::uint8_t>& labels) {
    for (const auto& pt : br.points) {
        const std::size_t si =
            std::size_t(std::clamp(std::lround(pt[0]), long(0), long(slices - 1)));
        const double d = pt[1], w = pt[2], r = pt[3];
        const long h_lo = std::max(long(0), long(std::floor(d - r)));
        const long h_hi = std::min(long(height - 1), long(std::ceil(d + r)));
        const long w_lo = std::max(long(0), long(std::floor(w - r)));
        const long w_hi = std::min(long(width - 1), long(std::ceil(w + r)));
        for (long h = h_lo; h <= h_hi; ++h) {
            for (long x = w_lo; x <= w_hi; ++x) {
                const double dy = double(h) - d, dx = double(x) - w;
                if (dy * dy + dx * dx <= r * r) {
                    labels[(si * height + std::size_t(h)) * width + std::size_t(x)] =
                        std::uint8_t(br.order);
                }
            }
        }
    }
}

} // namespace detail

// Builds a branching vessel network inside the retina band. Trunks are
// order 2; each may sprout order-3 children which may sprout order-4
// children, radii shrinking along the hierarchy.
inline VesselTree generate_vessel_tree(const PhantomConfig& cfg) {
    cfg.validate();
    const std::size_t S = cfg.slices, H = cfg.height, W = cfg.width;
    const double inner_row = cfg.band_inner_frac * double(H);
    const double outer_row = cfg.band_outer_frac * double(H);
    const double band_mid = 0.5 * (inner_row + outer_row);
    const double band_half = 0.5 * (outer_row - inner_row);
    const double d_lo = inner_row + 1.5, d_hi = outer_row - 1.5;
    const double max_r = std::max(0.5, band_half - 2.5);

    Rng rng(seed_combine(cfg.seed, 0x76657373656cULL)); // stream tag 'vessel'
    constexpr double two_pi = 6.28318530717958647692;
    const auto pick_radius = [&](double lo, double hi) {
        return std::clamp(0.5 * rng.uniform(lo, hi), 0.5, max_r);
    };
    const auto pick_depth = [&](double r) {
        const double lo = d_lo + r, hi = d_hi - r;
        return lo <= hi ? rng.uniform(lo, hi) : band_mid;
    };

    VesselTree tree;
    tree.slices = S;
    tree.height = H;
    tree.width = W;

    const std::size_t n_trunks =
        cfg.vessels_min + std::size_t(rng.next_below(cfg.vessels_max - cfg.vessels_min + 1));
    std::vector<std::size_t> order2, order3;
    for (std::size_t v = 0; v < n_trunks; ++v) {
        detail::BranchSpec b{};
        b.order = 2;
        b.parent = -1;
        if (rng.next_below(2) == 0) { // chord runs across the slice axis
            b.s0 = 0.0;
            b.s1 = double(S - 1);
            b.w0 = rng.uniform(0.1 * double(W), 0.9 * double(W));
            b.w1 = std::clamp(b.w0 + rng.uniform(-0.5, 0.5) * double(W), 1.0, double(W) - 2.0);
        } else { // chord runs across the width axis
            b.w0 = 0.0;
            b.w1 = double(W - 1);
            b.s0 = rng.uniform(0.1 * double(S), 0.9 * double(S));
            b.s1 = std::clamp(b.s0 + rng.uniform(-0.5, 0.5) * double(S), 1.0, double(S) - 2.0);
        }
        b.amp = rng.uniform(0.02, 0.08) * double(std::min(S, W));
        b.phase = rng.uniform(0.0, two_pi);
        b.cycles = rng.uniform(0.5, 1.5);
        b.r0 = pick_radius(cfg.caliber_min_px, cfg.caliber_max_px);
        b.r1 = std::max(0.5, b.r0 * rng.uniform(0.75, 1.0));
        b.d0 = pick_depth(b.r0);
        b.d1 = pick_depth(b.r1);
        b.damp = rng.uniform(0.0, 0.15) * band_half;
        b.dphase = rng.uniform(0.0, two_pi);
        tree.branches.push_back(detail::sample_branch(b, S, H, W, d_lo, d_hi));
        order2.push_back(tree.branches.size() - 1);
    }

    const auto sprout = [&](std::size_t parent_idx, int order) {
        const VesselBranch& parent = tree.branches[parent_idx];
        const double t = rng.uniform(0.25, 0.8);
        const auto& at = parent.points[std::size_t(t * double(parent.points.size() - 1))];
        const double span = rng.uniform(0.25, 0.55) * double(std::min(S, W));
        const double theta = rng.uniform(0.0, two_pi);
        detail::BranchSpec b{};
        b.order = order;
        b.parent = int(parent_idx);
        b.s0 = at[0];
        b.w0 = at[2];
        b.s1 = std::clamp(at[0] + span * std::sin(theta), 0.0, double(S - 1));
        b.w1 = std::clamp(at[2] + span * std::cos(theta), 0.0, double(W - 1));
        b.amp = rng.uniform(0.01, 0.04) * double(std::min(S, W));
        b.phase = rng.uniform(0.0, two_pi);
        b.cycles = rng.uniform(0.5, 1.0);
        // Children shrink but never below ~1.5 px; thinner tubes rasterize to
        // broken single-voxel runs that read as noise, not vessels.
        b.r0 = std::min(at[3], std::max(1.5, at[3] * rng.uniform(0.55, 0.8)));
        b.r1 = std::min(b.r0, std::max(1.5, b.r0 * rng.uniform(0.7, 0.95)));
        b.d0 = at[1];
        b.d1 = pick_depth(b.r1);
        b.damp = rng.uniform(0.0, 0.08) * band_half;
        b.dphase = rng.uniform(0.0, two_pi);
        tree.branches.push_back(detail::sample_branch(b, S, H, W, d_lo, d_hi));
        return tree.branches.size() - 1;
    };

    for (const std::size_t p : order2) {
        const std::size_t kids = std::size_t(rng.next_below(3)); // 0..2 order-3 children
        for (std::size_t k = 0; k < kids; ++k) order3.push_back(sprout(p, 3));
    }
    for (const std::size_t p : order3) {
        if (rng.next_below(2) == 1) sprout(p, 4); // coin-flip order-4 child
    }

    tree.labels.assign(S * H * W, 0);
    for (int order = 4; order >= 2; --order) { // lowest order stamps last and wins overlaps
        for (const auto& br : tree.branches) {
            if (br.order == order) detail::stamp_branch(br, S, H, W, tree.labels);
        }
    }
    return tree;
}

// Renders the noise-free tissue reflectivity: dark vitreous above a bright
// two-tone retina band, hyporeflective vessel lumens with a bright 1-px wall,
// and attenuated shadow columns under vessels scaling with vessel thickness.
inline std::vector<float> render_reflectivity(const PhantomConfig& cfg, const VesselTree& tree) {
    const std::size_t S = cfg.slices, H = cfg.height, W = cfg.width;
    const std::size_t inner_row = std::size_t(cfg.band_inner_frac * double(H));
    const std::size_t outer_row = std::size_t(cfg.band_outer_frac * double(H));
    const std::size_t mid_row = (inner_row + outer_row) / 2;

    std::vector<float> base(S * H * W);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t h = 0; h < H; ++h) {
            float v = 0.04f; // vitreous
            if (h >= inner_row && h < mid_row) v = 0.72f;      // upper band layer
            else if (h >= mid_row && h <= outer_row) v = 0.58f; // lower band layer
            else if (h > outer_row) v = 0.22f;                  // below the band
            float* row = base.data() + (s * H + h) * W;
            for (std::size_t w = 0; w < W; ++w) row[w] = v;
        }
    }

    // Lumen darkening and a 1-px hyperreflective wall around it (in-plane).
    const auto label_at = [&](std::size_t s, long h, long w) -> std::uint8_t {
        if (h < 0 || w < 0 || h >= long(H) || w >= long(W)) return 0;
        return tree.labels[(s * H + std::size_t(h)) * W + std::size_t(w)];
    };
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) {
                const std::size_t i = (s * H + h) * W + w;
                if (tree.labels[i] != 0) {
                    base[i] *= 0.55f;
                    continue;
                }
                bool wall = false;
                for (long dh = -1; dh <= 1 && !wall; ++dh) {
                    for (long dw = -1; dw <= 1 && !wall; ++dw) {
                        if (dh == 0 && dw == 0) continue;
                        wall = label_at(s, long(h) + dh, long(w) + dw) != 0;
                    }
                }
                if (wall) base[i] *= 1.35f;
            }
        }
    }

    // Shadow columns: everything below a vessel is attenuated, more for
    // thicker vessels. This is the main structural cue tied to vessel size.
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t w = 0; w < W; ++w) {
            std::size_t lumen_px = 0, bottom = 0;
            for (std::size_t h = 0; h < H; ++h) {
                if (tree.labels[(s * H + h) * W + w] != 0) {
                    ++lumen_px;
                    bottom = h;
                }
            }
            if (lumen_px == 0) continue;
            const double atten =
                1.0 - 0.3 * std::min(1.0, double(lumen_px) / cfg.caliber_max_px);
            for (std::size_t h = bottom + 2; h < H; ++h) {
                base[(s * H + h) * W + w] = float(base[(s * H + h) * W + w] * atten);
            }
        }
    }
    return base;
}

// Simulates N repeated acquisitions of the same tissue. Speckle is a
// multiplicative exponential field blended at contrast sigma; static tissue
// keeps one frozen field across repeats while lumen voxels mix in a fresh
// field per repeat with weight rho, so only flowing voxels decorrelate.
inline PhantomOutput generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    const std::size_t S = cfg.slices, H = cfg.height, W = cfg.width;
    const std::size_t n = S * H * W;

    PhantomOutput out;
    out.tree = generate_vessel_tree(cfg);
    const std::vector<float> base = render_reflectivity(cfg, out.tree);

    std::vector<double> e_static(n);
    {
        Rng rng(seed_combine(cfg.seed, 0x737461746963ULL)); // stream tag 'static'
        for (std::size_t i = 0; i < n; ++i) e_static[i] = rng.next_exponential();
    }

    const double sigma = cfg.speckle_sigma, rho = cfg.rho;
    out.repeats.reserve(cfg.repeats);
    std::vector<double> e_fresh(n);
    for (std::size_t k = 0; k < cfg.repeats; ++k) {
        Rng rng(seed_combine(cfg.seed, 0x666c6f77ULL, k)); // stream tag 'flow', per repeat
        for (std::size_t i = 0; i < n; ++i) e_fresh[i] = rng.next_exponential();
        Volume rep = make_volume(S, H, W, VolumeKind::structure);
        rep.meta["generator"] = "phantom";
        rep.meta["seed"] = std::to_string(cfg.seed);
        rep.meta["repeat"] = std::to_string(k);
        for (std::size_t i = 0; i < n; ++i) {
            const double e = out.tree.labels[i] != 0
                                 ? (1.0 - rho) * e_static[i] + rho * e_fresh[i]
                                 : e_static[i];
            const double v = double(base[i]) * (1.0 - sigma + sigma * e);
            rep.data[i] = float(std::clamp(v, 0.0, 1.0));
        }
        out.repeats.push_back(std::move(rep));
    }

    out.structure = out.repeats[0];
    out.structure.meta.erase("repeat");
    return out;
}

// Per-voxel population variance across the repeat stack, rescaled so that
// `ceiling` maps to 1.0 (larger variances saturate).
inline Volume speckle_variance(const std::vector<Volume>& repeats, double ceiling) {
    if (repeats.size() < 2) {
        throw ConfigError("speckle variance needs at least 2 repeats, got " +
                          std::to_string(repeats.size()));
    }
    if (!(ceiling > 0.0)) throw ConfigError("flow ceiling must be positive");
    for (std::size_t k = 1; k < repeats.size(); ++k) {
        check_congruent(repeats[0], repeats[k], "speckle_variance");
    }
    const std::size_t n = repeats[0].voxels();
    const double inv_n = 1.0 / double(repeats.size());

    Volume flow = make_volume(repeats[0].slices, repeats[0].height, repeats[0].width,
                              VolumeKind::flow);
    flow.meta = repeats[0].meta;
    flow.meta.erase("repeat");
    flow.meta["flow_ceiling"] = std::to_string(ceiling);
    for (std::size_t i = 0; i < n; ++i) {
        // Welford accumulation; M2 / N is the population variance.
        double mean = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < repeats.size(); ++k) {
            const double x = repeats[k].data[i];
            const double d = x - mean;
            mean += d / double(k + 1);
            m2 += d * (x - mean);
        }
        flow.data[i] = float(std::min(1.0, (m2 * inv_n) / ceiling));
    }
    return flow;
}

// Text sidecar with the branch geometry and the rasterized owner labels
// (run-length encoded over the flat voxel index).
inline void save_vessel_tree(const std::string& path, const VesselTree& tree) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "octflow-vessels 1\n";
    os << "dims " << tree.slices << " " << tree.height << " " << tree.width << "\n";
    os << "branches " << tree.branches.size() << "\n";
    char buf[128];
    for (const auto& br : tree.branches) {
        os << "branch " << br.order << " " << br.parent << " " << br.points.size() << "\n";
        for (const auto& pt : br.points) {
            std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", pt[0], pt[1], pt[2],
                          pt[3]);
            os << buf;
        }
    }
    std::vector<std::array<std::size_t, 3>> runs; // start, length, order
    const std::size_t n = tree.labels.size();
    for (std::size_t i = 0; i < n;) {
        if (tree.labels[i] == 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && tree.labels[j] == tree.labels[i]) ++j;
        runs.push_back({i, j - i, std::size_t(tree.labels[i])});
        i = j;
    }
    os << "labels " << runs.size() << "\n";
    for (const auto& r : runs) os << r[0] << " " << r[1] << " " << r[2] << "\n";
    os << "end\n";
    if (!os) throw IoError("short write to '" + path + "'");
}

inline VesselTree load_vessel_tree(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    const auto fail = [&path](const std::string& why) -> void {
        throw IoError("'" + path + "': " + why);
    };

    std::string word;
    int version = 0;
    is >> word >> version;
    if (!is || word != "octflow-vessels") fail("bad magic");
    if (version != 1) fail("unsupported version " + std::to_string(version));

    VesselTree tree;
    is >> word >> tree.slices >> tree.height >> tree.width;
    if (!is || word != "dims") fail("missing dims");
    if (tree.slices == 0 || tree.height == 0 || tree.width == 0) fail("zero dimension");

    std::size_t n_branches = 0;
    is >> word >> n_branches;
    if (!is || word != "branches") fail("missing branch count");
    tree.branches.resize(n_branches);
    for (auto& br : tree.branches) {
        std::size_t n_pts = 0;
        is >> word >> br.order >> br.parent >> n_pts;
        if (!is || word != "branch") fail("malformed branch header");
        if (br.order < 2 || br.order > 4) fail("branch order out of range");
        br.points.resize(n_pts);
        for (auto& pt : br.points) {
            is >> pt[0] >> pt[1] >> pt[2] >> pt[3];
            if (!is) fail("malformed branch point");
        }
    }

    std::size_t n_runs = 0;
    is >> word >> n_runs;
    if (!is || word != "labels") fail("missing labels section");
    const std::size_t n = tree.slices * tree.height * tree.width;
    tree.labels.assign(n, 0);
    for (std::size_t r = 0; r < n_runs; ++r) {
        std::size_t start = 0, len = 0, order = 0;
        is >> start >> len >> order;
        if (!is) fail("malformed label run");
        if (order < 2 || order > 4 || len == 0 || start + len > n) fail("label run out of range");
        std::fill_n(tree.labels.begin() + long(start), len, std::uint8_t(order));
    }
    is >> word;
    if (!is || word != "end") fail("missing end marker");
    return tree;
}

} // namespace octflow
