#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octflow/band.hpp"
#include "octflow/errors.hpp"
#include "octflow/rng.hpp"
#include "octflow/volume.hpp"

namespace octflow {

// Where a strip came from: `row`/`col` are the top-left corner of the strip
// window inside the named volume's B-scan `slice`.
struct StripOrigin {
    std::string volume_id;
    std::size_t slice = 0;
    std::size_t row = 0;
    std::size_t col = 0;
};

// Co-registered structure/flow windows cut from the same B-scan position.
struct StripPair {
    std::size_t height = 0;
    std::size_t width = 0;
    StripOrigin origin;
    std::vector<float> structure;
    std::vector<float> flow;
};

// Cuts each B-scan into floor(W / strip_w) non-overlapping full-height
// strips; remainder columns on the right are dropped. When the volume is
// taller than the strip, the strip_h rows are centered on the detected
// retina band midpoint of that B-scan (clamped to the volume).
inline std::vector<StripPair> slice_strips(const Volume& structure, const Volume& flow,
                                           std::size_t strip_h, std::size_t strip_w,
                                           const std::string& volume_id,
                                           double nominal_inner_frac = 0.25,
                                           double nominal_outer_frac = 0.75) {
    if (strip_h == 0 || strip_w == 0) throw ConfigError("strip dims must be positive");
    check_congruent(structure, flow, "slice_strips");
    const std::size_t S = structure.slices, H = structure.height, W = structure.width;
    if (W < strip_w) {
        throw ShapeError("volume '" + volume_id + "': width " + std::to_string(W) +
                         " is smaller than strip width " + std::to_string(strip_w));
    }
    if (H < strip_h) {
        throw ShapeError("volume '" + volume_id + "': height " + std::to_string(H) +
                         " is smaller than strip height " + std::to_string(strip_h));
    }

    std::vector<std::size_t> top_row(S, 0);
    if (H > strip_h) {
        const BandMap band = retina_band(structure, nominal_inner_frac, nominal_outer_frac);
        for (std::size_t s = 0; s < S; ++s) {
            const double mid = band_midpoint_row(band, s);
            const double want = mid - 0.5 * double(strip_h);
            const double lim = double(H - strip_h);
            top_row[s] = std::size_t(std::lround(std::clamp(want, 0.0, lim)));
        }
    }

    const std::size_t per_scan = W / strip_w;
    std::vector<StripPair> strips;
    strips.reserve(S * per_scan);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < per_scan; ++k) {
            StripPair p;
            p.height = strip_h;
            p.width = strip_w;
            p.origin = {volume_id, s, top_row[s], k * strip_w};
            p.structure.resize(strip_h * strip_w);
            p.flow.resize(strip_h * strip_w);
            for (std::size_t r = 0; r < strip_h; ++r) {
                const std::size_t src_r = top_row[s] + r;
                for (std::size_t c = 0; c < strip_w; ++c) {
                    const std::size_t src_c = k * strip_w + c;
                    p.structure[r * strip_w + c] = structure.at(s, src_r, src_c);
                    p.flow[r * strip_w + c] = flow.at(s, src_r, src_c);
                }
            }
            strips.push_back(std::move(p));
        }
    }
    return strips;
}

enum class SplitRole { train, validation, test };

inline const char* split_role_name(SplitRole r) {
    switch (r) {
        case SplitRole::train: return "train";
        case SplitRole::validation: return "validation";
        case SplitRole::test: return "test";
    }
    return "?";
}

// Volume-level partition of the corpus. Membership is by volume id; strips
// inherit the role of their source volume, so no window of a held-out volume
// can migrate between roles.
struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::uint64_t seed = 0;

    const std::vector<std::string>& set(SplitRole r) const {
        switch (r) {
            case SplitRole::train: return train;
            case SplitRole::validation: return validation;
            case SplitRole::test: return test;
        }
        return train;
    }

    bool contains(SplitRole r, const std::string& id) const {
        const auto& v = set(r);
        return std::binary_search(v.begin(), v.end(), id);
    }

    SplitRole role_of(const std::string& id) const {
        if (contains(SplitRole::train, id)) return SplitRole::train;
        if (contains(SplitRole::validation, id)) return SplitRole::validation;
        if (contains(SplitRole::test, id)) return SplitRole::test;
        throw DomainError("volume '" + id + "' is not in the split");
    }
};

// Deterministically assigns volume ids to train/validation/test. Set sizes
// are round(f_val*N) and round(f_test*N) with all remaining volumes going to
// train. The same (ids, fractions, seed) always yields the same split.
inline DatasetSplit split_corpus(const std::vector<std::string>& ids, double f_train, double f_val,
                                 double f_test, std::uint64_t seed) {
    const std::size_t n = ids.size();
    if (n < 3) {
        throw ConfigError("corpus has " + std::to_string(n) + " volumes, need at least 3");
    }
    if (!(f_train > 0.0 && f_val > 0.0 && f_test > 0.0)) {
        throw ConfigError("split fractions must be positive");
    }
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
    {
        std::vector<std::string> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConfigError("corpus volume ids are not unique");
        }
    }
    const std::size_t n_val = std::size_t(std::llround(f_val * double(n)));
    const std::size_t n_test = std::size_t(std::llround(f_test * double(n)));
    if (n_val + n_test >= n) {
        throw ConfigError("split fractions leave no training volumes for corpus of " +
                          std::to_string(n));
    }
    const std::size_t n_train = n - n_val - n_test;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed_combine(seed, 0x73706c6974ULL)); // stream tag 'split'
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = std::size_t(rng.next_below(i + 1));
        std::swap(order[i], order[j]);
    }

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& id = ids[order[i]];
        if (i < n_train) {
            split.train.push_back(id);
        } else if (i < n_train + n_val) {
            split.validation.push_back(id);
        } else {
            split.test.push_back(id);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

// One corpus volume pair on disk.
struct CorpusEntry {
    std::string id;
    std::string structure_path;
    std::string flow_path;
};

// Scans a directory for `<id>.structure.ovol` / `<id>.flow.ovol` pairs.
// An id with only one of the two files is an error; anything else is ignored.
inline std::vector<CorpusEntry> scan_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> structures, flows;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        const auto ends_with = [&name](const std::string& suffix) {
            return name.size() > suffix.size() &&
                   name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (ends_with(".structure.ovol")) {
            structures.push_back(name.substr(0, name.size() - 15));
        } else if (ends_with(".flow.ovol")) {
            flows.push_back(name.substr(0, name.size() - 10));
        }
    }
    std::sort(structures.begin(), structures.end());
    std::sort(flows.begin(), flows.end());
    for (const auto& id : structures) {
        if (!std::binary_search(flows.begin(), flows.end(), id)) {
            throw IoError("corpus '" + dir + "': volume '" + id + "' has no flow file");
        }
    }
    for (const auto& id : flows) {
        if (!std::binary_search(structures.begin(), structures.end(), id)) {
            throw IoError("corpus '" + dir + "': volume '" + id + "' has no structure file");
        }
    }
    std::vector<CorpusEntry> entries;
    entries.reserve(structures.size());
    for (const auto& id : structures) {
        entries.push_back({id, (fs::path(dir) / (id + ".structure.ovol")).string(),
                           (fs::path(dir) / (id + ".flow.ovol")).string()});
    }
    return entries;
}

// Loads and slices exactly the volumes belonging to `role`. Kind tags are
// verified so a mislabeled file cannot smuggle data across roles.
inline std::vector<StripPair> load_role_strips(const std::vector<CorpusEntry>& entries,
                                               const DatasetSplit& split, SplitRole role,
                                               std::size_t strip_h, std::size_t strip_w,
                                               double nominal_inner_frac = 0.25,
                                               double nominal_outer_frac = 0.75) {
    std::vector<StripPair> strips;
    for (const auto& entry : entries) {
        if (!split.contains(role, entry.id)) continue;
        const Volume structure = load_volume(entry.structure_path);
        const Volume flow = load_volume(entry.flow_path);
        if (structure.kind != VolumeKind::structure) {
            throw DomainError("'" + entry.structure_path + "' has kind " +
                              volume_kind_name(structure.kind) + ", expected structure");
        }
        if (flow.kind != VolumeKind::flow) {
            throw DomainError("'" + entry.flow_path + "' has kind " +
                              volume_kind_name(flow.kind) + ", expected flow");
        }
        auto part = slice_strips(structure, flow, strip_h, strip_w, entry.id, nominal_inner_frac,
                                 nominal_outer_frac);
        for (auto& p : part) strips.push_back(std::move(p));
    }
    return strips;
}

} // namespace octflow
