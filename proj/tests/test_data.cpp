#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "octflow/datapipe.hpp"
#include "octflow/errors.hpp"
#include "octflow/rng.hpp"
#include "octflow/volume.hpp"

using namespace octflow;
namespace fs = std::filesystem;

namespace {

Volume random_volume(std::size_t s, std::size_t h, std::size_t w, VolumeKind kind,
                     std::uint64_t seed) {
    Volume v = make_volume(s, h, w, kind);
    Rng rng(seed);
    for (auto& x : v.data) x = float(rng.next_double());
    return v;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("octflow_data_" + std::to_string(++counter));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("volume round trip is bit identical") {
    Volume v = random_volume(3, 7, 5, VolumeKind::flow, 91);
    v.meta["seed"] = "91";
    v.meta["generator"] = "test";
    const std::string path = "data_roundtrip.tmp";
    save_volume(path, v);
    const Volume r = load_volume(path);
    std::remove(path.c_str());

    CHECK(r.slices == 3);
    CHECK(r.height == 7);
    CHECK(r.width == 5);
    CHECK(r.kind == VolumeKind::flow);
    CHECK(r.meta == v.meta);
    REQUIRE(r.data.size() == v.data.size());
    CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("minimal 1x1x1 volume round trips") {
    Volume v = make_volume(1, 1, 1, VolumeKind::structure);
    v.data[0] = 0.625f;
    const std::string path = "data_tiny.tmp";
    save_volume(path, v);
    const Volume r = load_volume(path);
    std::remove(path.c_str());
    CHECK(r.voxels() == 1);
    CHECK(r.data[0] == 0.625f);
}

TEST_CASE("corrupted volume header magic is rejected") {
    Volume v = random_volume(2, 4, 4, VolumeKind::structure, 7);
    const std::string path = "data_badmagic.tmp";
    save_volume(path, v);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_MATCHES(load_volume(path), IoError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("bad magic")));
    std::remove(path.c_str());
}

TEST_CASE("unsupported volume version is rejected") {
    Volume v = random_volume(2, 4, 4, VolumeKind::structure, 7);
    const std::string path = "data_badver.tmp";
    save_volume(path, v);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(16);
        f.put(char(9));
    }
    CHECK_THROWS_AS(load_volume(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("truncated volume payload is rejected") {
    Volume v = random_volume(2, 8, 8, VolumeKind::structure, 8);
    const std::string path = "data_trunc.tmp";
    save_volume(path, v);
    const auto full = fs::file_size(path);
    fs::resize_file(path, full - 10);
    CHECK_THROWS_AS(load_volume(path), IoError);
    fs::resize_file(path, 40); // inside the header
    CHECK_THROWS_AS(load_volume(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("trailing bytes after volume payload are rejected") {
    Volume v = random_volume(1, 2, 2, VolumeKind::structure, 9);
    const std::string path = "data_trail.tmp";
    save_volume(path, v);
    {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.write("zz", 2);
    }
    CHECK_THROWS_AS(load_volume(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("out of range voxels are rejected at load, not clipped") {
    Volume v = make_volume(1, 2, 2, VolumeKind::structure);
    v.data = {0.0f, 1.0f, 0.5f, 1.5f};
    const std::string path = "data_range.tmp";
    save_volume(path, v);
    CHECK_THROWS_AS(load_volume(path), DomainError);

    v.data[3] = -0.25f;
    save_volume(path, v);
    CHECK_THROWS_AS(load_volume(path), DomainError);

    v.data[3] = std::numeric_limits<float>::quiet_NaN();
    save_volume(path, v);
    CHECK_THROWS_AS(load_volume(path), DomainError);

    v.data[3] = 1.0f; // boundary values are legal
    save_volume(path, v);
    CHECK_NOTHROW(load_volume(path));
    std::remove(path.c_str());
}

TEST_CASE("pgm export writes valid 8 and 16 bit graymaps") {
    const float pix[4] = {0.0f, 1.0f, 0.5f, 0.25f};
    const std::string p8 = "data_img8.tmp", p16 = "data_img16.tmp";
    save_pgm8(p8, 2, 2, pix);
    save_pgm16(p16, 2, 2, pix);

    std::ifstream f8(p8, std::ios::binary);
    std::string magic, dims1, dims2, maxval;
    f8 >> magic >> dims1 >> dims2 >> maxval;
    CHECK(magic == "P5");
    CHECK(dims1 == "2");
    CHECK(dims2 == "2");
    CHECK(maxval == "255");
    f8.get();
    unsigned char b8[4];
    f8.read(reinterpret_cast<char*>(b8), 4);
    CHECK(b8[0] == 0);
    CHECK(b8[1] == 255);
    CHECK(b8[2] == 128); // round(0.5 * 255) = 128
    CHECK(b8[3] == 64);  // round(0.25 * 255) = 64

    std::ifstream f16(p16, std::ios::binary);
    f16 >> magic >> dims1 >> dims2 >> maxval;
    CHECK(maxval == "65535");
    f16.get();
    unsigned char b16[8];
    f16.read(reinterpret_cast<char*>(b16), 8);
    // big-endian samples
    CHECK((b16[0] * 256 + b16[1]) == 0);
    CHECK((b16[2] * 256 + b16[3]) == 65535);
    CHECK((b16[4] * 256 + b16[5]) == 32768);
    CHECK((b16[6] * 256 + b16[7]) == 16384);

    std::remove(p8.c_str());
    std::remove(p16.c_str());
}

TEST_CASE("768 wide scans cut into 6 strips per B-scan") {
    const Volume s = random_volume(2, 8, 768, VolumeKind::structure, 11);
    const Volume f = random_volume(2, 8, 768, VolumeKind::flow, 12);
    const auto strips = slice_strips(s, f, 8, 128, "vol-a");
    REQUIRE(strips.size() == 12); // 6 per B-scan, 2 B-scans
    std::set<std::size_t> offsets;
    for (const auto& p : strips) {
        CHECK(p.height == 8);
        CHECK(p.width == 128);
        CHECK(p.origin.volume_id == "vol-a");
        CHECK(p.origin.col % 128 == 0);
        if (p.origin.slice == 0) offsets.insert(p.origin.col);
    }
    CHECK(offsets == std::set<std::size_t>{0, 128, 256, 384, 512, 640});
}

TEST_CASE("right remainder columns are dropped") {
    const Volume s = random_volume(1, 8, 500, VolumeKind::structure, 13);
    const Volume f = random_volume(1, 8, 500, VolumeKind::flow, 14);
    const auto strips = slice_strips(s, f, 8, 128, "vol-b");
    REQUIRE(strips.size() == 3); // floor(500/128), 116 columns dropped
    for (const auto& p : strips) CHECK(p.origin.col + 128 <= 384);
}

TEST_CASE("strips partition the cropped B-scan exactly") {
    const Volume s = random_volume(3, 8, 300, VolumeKind::structure, 15);
    const Volume f = random_volume(3, 8, 300, VolumeKind::flow, 16);
    const std::size_t w_s = 64, n_strips = 300 / 64; // 4 strips, 44 columns dropped
    const auto strips = slice_strips(s, f, 8, w_s, "vol-c");
    REQUIRE(strips.size() == 3 * n_strips);

    // reassemble from origins and compare against the source crop
    std::vector<float> rebuilt(3 * 8 * n_strips * w_s, -1.0f);
    for (const auto& p : strips) {
        for (std::size_t r = 0; r < p.height; ++r) {
            for (std::size_t c = 0; c < p.width; ++c) {
                rebuilt[(p.origin.slice * 8 + r) * (n_strips * w_s) + p.origin.col + c] =
                    p.structure[r * p.width + c];
            }
        }
    }
    for (std::size_t sl = 0; sl < 3; ++sl) {
        for (std::size_t r = 0; r < 8; ++r) {
            for (std::size_t c = 0; c < n_strips * w_s; ++c) {
                REQUIRE(rebuilt[(sl * 8 + r) * (n_strips * w_s) + c] == s.at(sl, r, c));
            }
        }
    }
}

TEST_CASE("flow strip matches structure strip position") {
    const Volume s = random_volume(2, 8, 256, VolumeKind::structure, 17);
    const Volume f = random_volume(2, 8, 256, VolumeKind::flow, 18);
    const auto strips = slice_strips(s, f, 8, 128, "vol-d");
    for (const auto& p : strips) {
        for (std::size_t r = 0; r < p.height; ++r) {
            for (std::size_t c = 0; c < p.width; ++c) {
                REQUIRE(p.flow[r * p.width + c] ==
                        f.at(p.origin.slice, p.origin.row + r, p.origin.col + c));
            }
        }
    }
}

TEST_CASE("too narrow volumes are rejected with the volume named") {
    const Volume s = random_volume(1, 8, 100, VolumeKind::structure, 19);
    const Volume f = random_volume(1, 8, 100, VolumeKind::flow, 20);
    CHECK_THROWS_MATCHES(slice_strips(s, f, 8, 128, "narrow-vol"), ShapeError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("narrow-vol")));
    CHECK_THROWS_AS(slice_strips(s, f, 16, 64, "short-vol"), ShapeError);
}

TEST_CASE("tall volumes anchor strips on the band midpoint") {
    // noiseless bright band at rows 20..44 of a 64 tall scan; midpoint 32
    Volume s = make_volume(2, 64, 64, VolumeKind::structure);
    Volume f = make_volume(2, 64, 64, VolumeKind::flow);
    for (std::size_t sl = 0; sl < 2; ++sl) {
        for (std::size_t h = 20; h <= 44; ++h) {
            for (std::size_t w = 0; w < 64; ++w) s.at(sl, h, w) = 0.7f;
        }
    }
    const auto strips = slice_strips(s, f, 32, 32, "tall-vol");
    REQUIRE(strips.size() == 4);
    for (const auto& p : strips) {
        CHECK(p.origin.row >= 15);
        CHECK(p.origin.row <= 17);
        // content traces back to the anchored window
        for (std::size_t r = 0; r < 32; ++r) {
            for (std::size_t c = 0; c < 32; ++c) {
                REQUIRE(p.structure[r * 32 + c] ==
                        s.at(p.origin.slice, p.origin.row + r, p.origin.col + c));
            }
        }
    }

    // band hugging the top clamps the window to row 0
    Volume top = make_volume(1, 64, 64, VolumeKind::structure);
    for (std::size_t h = 2; h <= 12; ++h) {
        for (std::size_t w = 0; w < 64; ++w) top.at(0, h, w) = 0.7f;
    }
    Volume topf = make_volume(1, 64, 64, VolumeKind::flow);
    const auto clamped = slice_strips(top, topf, 32, 32, "top-vol");
    for (const auto& p : clamped) CHECK(p.origin.row == 0);
}

TEST_CASE("20 volumes split 14/3/3") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("v" + std::to_string(i));
    const DatasetSplit split = split_corpus(ids, 0.70, 0.15, 0.15, 404);
    CHECK(split.train.size() == 14);
    CHECK(split.validation.size() == 3);
    CHECK(split.test.size() == 3);
}

TEST_CASE("split is deterministic under seed and varies across seeds") {
    std::vector<std::string> ids;
    for (int i = 0; i < 16; ++i) ids.push_back("v" + std::to_string(i));
    const DatasetSplit a = split_corpus(ids, 0.70, 0.15, 0.15, 5);
    const DatasetSplit b = split_corpus(ids, 0.70, 0.15, 0.15, 5);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);

    bool any_differs = false;
    for (std::uint64_t seed = 6; seed < 12 && !any_differs; ++seed) {
        const DatasetSplit c = split_corpus(ids, 0.70, 0.15, 0.15, seed);
        any_differs = c.train != a.train;
    }
    CHECK(any_differs);
}

TEST_CASE("splits are disjoint and exhaustive across 100 seeds") {
    std::vector<std::string> ids;
    for (int i = 0; i < 17; ++i) ids.push_back("vol" + std::to_string(i));
    const std::set<std::string> corpus(ids.begin(), ids.end());
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const DatasetSplit s = split_corpus(ids, 0.70, 0.15, 0.15, seed);
        std::set<std::string> seen;
        std::size_t total = 0;
        for (const auto* set : {&s.train, &s.validation, &s.test}) {
            for (const auto& id : *set) seen.insert(id);
            total += set->size();
        }
        REQUIRE(total == ids.size()); // no id claimed twice
        REQUIRE(seen == corpus);      // no id dropped
    }
}

TEST_CASE("split rejects bad corpora and fractions") {
    CHECK_THROWS_AS(split_corpus({"a", "b"}, 0.70, 0.15, 0.15, 1), ConfigError);
    CHECK_THROWS_AS(split_corpus({"a", "b", "a"}, 0.70, 0.15, 0.15, 1), ConfigError);
    CHECK_THROWS_AS(split_corpus({"a", "b", "c"}, 0.70, 0.15, 0.10, 1), ConfigError);
    CHECK_THROWS_AS(split_corpus({"a", "b", "c"}, -0.7, 0.85, 0.85, 1), ConfigError);
    // rounding must leave at least one training volume
    CHECK_THROWS_AS(split_corpus({"a", "b", "c", "d"}, 0.2, 0.4, 0.4, 1), ConfigError);
}

TEST_CASE("split membership queries") {
    std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
    const DatasetSplit s = split_corpus(ids, 0.70, 0.15, 0.15, 2);
    for (const auto& id : ids) {
        const SplitRole role = s.role_of(id);
        CHECK(s.contains(role, id));
    }
    CHECK_THROWS_AS(s.role_of("zz"), DomainError);
}

TEST_CASE("corpus scan pairs structure and flow files") {
    TempDir dir;
    for (const char* id : {"p0", "p1", "p2"}) {
        save_volume(dir.file(std::string(id) + ".structure.ovol"),
                    random_volume(1, 4, 8, VolumeKind::structure, 1));
        save_volume(dir.file(std::string(id) + ".flow.ovol"),
                    random_volume(1, 4, 8, VolumeKind::flow, 2));
    }
    { std::ofstream(dir.file("notes.txt")) << "ignored"; }
    const auto entries = scan_corpus(dir.str());
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].id == "p0");
    CHECK(entries[2].id == "p2");

    save_volume(dir.file("orphan.structure.ovol"),
                random_volume(1, 4, 8, VolumeKind::structure, 3));
    CHECK_THROWS_AS(scan_corpus(dir.str()), IoError);
}

TEST_CASE("role loader only yields strips from that role's volumes") {
    TempDir dir;
    std::vector<std::string> ids;
    for (int i = 0; i < 6; ++i) {
        const std::string id = "vol" + std::to_string(i);
        ids.push_back(id);
        save_volume(dir.file(id + ".structure.ovol"),
                    random_volume(2, 8, 32, VolumeKind::structure, 100 + i));
        save_volume(dir.file(id + ".flow.ovol"),
                    random_volume(2, 8, 32, VolumeKind::flow, 200 + i));
    }
    const auto entries = scan_corpus(dir.str());
    const DatasetSplit split = split_corpus(ids, 0.70, 0.15, 0.15, 7);
    REQUIRE(split.test.size() == 1);
    REQUIRE(split.validation.size() == 1);

    const auto train = load_role_strips(entries, split, SplitRole::train, 8, 16);
    CHECK(train.size() == split.train.size() * 2 * 2); // 2 strips per scan, 2 scans
    for (const auto& p : train) {
        REQUIRE(split.contains(SplitRole::train, p.origin.volume_id));
        REQUIRE_FALSE(split.contains(SplitRole::test, p.origin.volume_id));
        REQUIRE_FALSE(split.contains(SplitRole::validation, p.origin.volume_id));
    }
    const auto test = load_role_strips(entries, split, SplitRole::test, 8, 16);
    CHECK(test.size() == 4);
    for (const auto& p : test) CHECK(p.origin.volume_id == split.test[0]);
}

TEST_CASE("role loader rejects mislabeled volume kinds") {
    TempDir dir;
    // flow file wrongly tagged as structure
    save_volume(dir.file("bad.structure.ovol"),
                random_volume(1, 8, 16, VolumeKind::structure, 5));
    save_volume(dir.file("bad.flow.ovol"), random_volume(1, 8, 16, VolumeKind::structure, 6));
    save_volume(dir.file("ok1.structure.ovol"),
                random_volume(1, 8, 16, VolumeKind::structure, 7));
    save_volume(dir.file("ok1.flow.ovol"), random_volume(1, 8, 16, VolumeKind::flow, 8));
    save_volume(dir.file("ok2.structure.ovol"),
                random_volume(1, 8, 16, VolumeKind::structure, 9));
    save_volume(dir.file("ok2.flow.ovol"), random_volume(1, 8, 16, VolumeKind::flow, 10));

    const auto entries = scan_corpus(dir.str());
    DatasetSplit split;
    split.train = {"bad", "ok1", "ok2"};
    CHECK_THROWS_AS(load_role_strips(entries, split, SplitRole::train, 8, 16), DomainError);
}
