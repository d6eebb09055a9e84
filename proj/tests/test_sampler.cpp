#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "mfe/rng.hpp"
#include "mfe/sampler.hpp"
#include "mfe/synthgen.hpp"

using namespace mfe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mfe_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// 10x10 window with the requested class-pixel counts, rest filled with
// non-white "other tissue" pixels
std::pair<ImageU8, ClassMask> window_with(int spongiosis_px, int epidermis_px) {
    ImageU8 img(10, 10, 3, 200);
    ClassMask mask(10, 10, 0);
    int placed = 0;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            if (placed < spongiosis_px) mask.at(y, x) = 2;
            else if (placed < spongiosis_px + epidermis_px) mask.at(y, x) = 1;
            ++placed;
        }
    return {img, mask};
}

SamplerConfig small_cfg() {
    SamplerConfig c;
    c.patch_size = 10;
    return c;
}

}  // namespace

TEST_CASE("classification rules fire in order with strict thresholds") {
    const SamplerConfig cfg = small_cfg();

    ImageU8 white(10, 10, 3, 255);
    ClassMask any(10, 10, 1);
    CHECK(classify_patch(white, any, cfg) == PatchType::background);

    {  // 21% spongiosis -> spongiosis
        auto [img, mask] = window_with(21, 0);
        CHECK(classify_patch(img, mask, cfg) == PatchType::spongiosis);
    }
    {  // exactly 20% is NOT > 20%
        auto [img, mask] = window_with(20, 30);
        CHECK(classify_patch(img, mask, cfg) == PatchType::epidermis);
    }
    {  // 15% spongiosis + 30% epidermis: spongiosis rule fails, combined 45% > 40%
        auto [img, mask] = window_with(15, 30);
        CHECK(classify_patch(img, mask, cfg) == PatchType::epidermis);
    }
    {  // 5% epidermis, no spongiosis, non-white -> fall-through
        auto [img, mask] = window_with(0, 5);
        CHECK(classify_patch(img, mask, cfg) == PatchType::other_tissue);
    }
    {  // exactly 40% combined is NOT > 40%
        auto [img, mask] = window_with(10, 30);
        CHECK(classify_patch(img, mask, cfg) == PatchType::other_tissue);
    }
    {  // one off-white pixel breaks the background rule
        ImageU8 img(10, 10, 3, 255);
        img.at(3, 3, 1) = 254;
        ClassMask mask(10, 10, 0);
        CHECK(classify_patch(img, mask, cfg) == PatchType::other_tissue);
    }
}

TEST_CASE("classify_patch is invariant under pixel permutations") {
    const SamplerConfig cfg = small_cfg();
    auto [img, mask] = window_with(23, 17);
    const PatchType before = classify_patch(img, mask, cfg);

    // apply the same random permutation to image and mask pixels
    Rng rng(31);
    std::vector<int> perm(100);
    for (int i = 0; i < 100; ++i) perm[i] = i;
    rng.shuffle(perm.data(), perm.size());
    ImageU8 img2(10, 10, 3);
    ClassMask mask2(10, 10);
    for (int i = 0; i < 100; ++i) {
        const int sy = perm[i] / 10, sx = perm[i] % 10;
        const int dy = i / 10, dx = i % 10;
        for (int c = 0; c < 3; ++c) img2.at(dy, dx, c) = img.at(sy, sx, c);
        mask2.at(dy, dx) = mask.at(sy, sx);
    }
    CHECK(classify_patch(img2, mask2, cfg) == before);
}

TEST_CASE("classify_patch rejects incongruent windows") {
    ImageU8 img(10, 10, 3, 255);
    ClassMask mask(8, 8, 0);
    CHECK_THROWS_AS(classify_patch(img, mask, small_cfg()), std::invalid_argument);
}

namespace {

// synthetic slide with all four types reachable at patch size 64
struct FourTypeSlide {
    ImageU8 image;
    ClassMask mask;
};

FourTypeSlide make_four_type_slide(int size = 512) {
    GenConfig g;
    g.seed = 77;
    g.slide_h = g.slide_w = size;
    g.tissue_top = 0.42;
    g.epidermis_band_min = 0.16;
    g.epidermis_band_max = 0.20;
    g.spongiosis_count_min = 6;
    g.spongiosis_count_max = 8;
    g.spongiosis_radius_min = 0.05;
    g.spongiosis_radius_max = 0.07;
    const SynthSlide s = generate_slide(g, 0, 0, Disease::Eczema);
    return {s.image, s.mask};
}

}  // namespace

TEST_CASE("extract_patches fills every quota on a four-type slide") {
    const FourTypeSlide slide = make_four_type_slide();
    SamplerConfig cfg;
    cfg.patch_size = 64;
    cfg.min_corner_distance = 40;
    cfg.quota_per_type = 10;
    const auto refs = extract_patches("s0", slide.image, slide.mask, cfg, 5);
    REQUIRE(refs.size() == 40);
    std::map<PatchType, int> hist;
    for (const auto& r : refs) ++hist[r.patch_type];
    for (int t = 0; t < kNumPatchTypes; ++t)
        CHECK(hist[static_cast<PatchType>(t)] == 10);
}

TEST_CASE("all-white slide yields only background patches") {
    ImageU8 white(256, 256, 3, 255);
    ClassMask mask(256, 256, 0);
    SamplerConfig cfg;
    cfg.patch_size = 32;
    cfg.quota_per_type = 5;
    cfg.max_attempts_per_patch = 40;  // keep the exhaustion quick
    const auto refs = extract_patches("w", white, mask, cfg, 3);
    REQUIRE(refs.size() == 5);
    for (const auto& r : refs) CHECK(r.patch_type == PatchType::background);
}

TEST_CASE("pairwise corner distances respect the minimum (brute force)") {
    const FourTypeSlide slide = make_four_type_slide(768);
    SamplerConfig cfg;
    cfg.patch_size = 64;
    cfg.min_corner_distance = 100;
    cfg.quota_per_type = 6;
    const auto refs = extract_patches("s0", slide.image, slide.mask, cfg, 9);
    REQUIRE(refs.size() >= 12);
    for (size_t i = 0; i < refs.size(); ++i)
        for (size_t j = i + 1; j < refs.size(); ++j) {
            const double dy = refs[i].y - refs[j].y, dx = refs[i].x - refs[j].x;
            CHECK(std::sqrt(dy * dy + dx * dx) >= 100.0);
        }
}

TEST_CASE("extraction typing agrees with the per-window classifier") {
    const FourTypeSlide slide = make_four_type_slide();
    SamplerConfig cfg;
    cfg.patch_size = 64;
    cfg.quota_per_type = 6;
    cfg.max_attempts_per_patch = 200;
    const auto refs = extract_patches("s0", slide.image, slide.mask, cfg, 41);
    REQUIRE(!refs.empty());
    for (const auto& r : refs)
        CHECK(classify_window(slide.image, slide.mask, r.y, r.x, r.size, cfg) == r.patch_type);
}

TEST_CASE("extraction is deterministic per seed and respects quotas") {
    const FourTypeSlide slide = make_four_type_slide();
    SamplerConfig cfg;
    cfg.patch_size = 64;
    cfg.quota_per_type = 4;
    const auto a = extract_patches("s0", slide.image, slide.mask, cfg, 123);
    const auto b = extract_patches("s0", slide.image, slide.mask, cfg, 123);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        CHECK(a[i].patch_type == b[i].patch_type);
    }
    std::map<PatchType, int> hist;
    for (const auto& r : a) ++hist[r.patch_type];
    for (const auto& [t, n] : hist) CHECK(n <= cfg.quota_per_type);
}

TEST_CASE("slides smaller than the patch are rejected") {
    ImageU8 img(32, 32, 3, 255);
    ClassMask mask(32, 32, 0);
    SamplerConfig cfg;
    cfg.patch_size = 64;
    CHECK_THROWS_AS(extract_patches("tiny", img, mask, cfg, 0), std::invalid_argument);
}

TEST_CASE("materialize round-trips windows byte-for-byte") {
    const fs::path dir = temp_dir("materialize");
    GenConfig g;
    g.seed = 5;
    g.slide_h = g.slide_w = 256;
    g.n_patients = 1;
    const Manifest m = generate_dataset(g, (dir / "data").string());

    SamplerConfig cfg;
    cfg.patch_size = 64;
    cfg.quota_per_type = 3;
    cfg.max_attempts_per_patch = 200;
    const auto refs = extract_patches(m.slides[0], m, cfg, 21);
    REQUIRE(!refs.empty());

    const std::string index = materialize_patches(refs, m, (dir / "patches").string());
    const auto rows = load_patch_index(index);
    REQUIRE(rows.size() == refs.size());

    // index histogram equals ref histogram
    std::map<PatchType, int> h1, h2;
    for (const auto& r : refs) ++h1[r.patch_type];
    for (const auto& r : rows) ++h2[r.patch_type];
    CHECK(h1 == h2);

    // a written patch equals the source window
    const ImageU8 full = read_raster(m.resolve(m.slides[0].image_path));
    const ImageU8 patch0 =
        read_raster((fs::path(index).parent_path() / rows[0].image_file).string());
    for (int y = 0; y < rows[0].size; ++y)
        for (int x = 0; x < rows[0].size; ++x)
            for (int c = 0; c < 3; ++c)
                REQUIRE(patch0.at(y, x, c) == full.at(rows[0].y + y, rows[0].x + x, c));
}

TEST_CASE("grid_cut partitions and pads") {
    {  // 1024x1024 tile 512 -> 4 windows
        ClassMask m(1024, 1024, 1);
        CHECK(grid_cut(m, 512).size() == 4);
    }
    {  // 1000x1000 tile 512 -> 4 windows with 24-pixel replicated margins
        ImageU8 img(1000, 1000, 1);
        for (int y = 0; y < 1000; ++y)
            for (int x = 0; x < 1000; ++x) img.at(y, x) = static_cast<uint8_t>((y * 7 + x) % 251);
        const auto layout = grid_layout(1000, 1000, 512);
        REQUIRE(layout.size() == 4);
        CHECK(layout[3].pad_y == 24);
        CHECK(layout[3].pad_x == 24);
        const auto tiles = grid_cut(img, 512);
        // padded margin replicates the last row/column
        const ImageU8& last = tiles[3];
        CHECK(last.at(511, 100) == img.at(999, 512 + 100));
        // concatenating windows minus padding reproduces the input
        for (size_t t = 0; t < layout.size(); ++t) {
            const GridWindow& w = layout[t];
            for (int y = 0; y + w.pad_y < 512; ++y)
                for (int x = 0; x + w.pad_x < 512; ++x)
                    REQUIRE(tiles[t].at(y, x) == img.at(w.y + y, w.x + x));
        }
    }
}
