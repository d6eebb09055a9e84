#pragma once

#include <string>
#include <vector>

#include "mfe/core_data.hpp"
#include "mfe/image.hpp"

namespace mfe {

enum class PatchType { background = 0, spongiosis = 1, epidermis = 2, other_tissue = 3 };
constexpr int kNumPatchTypes = 4;

const char* to_string(PatchType t);
PatchType patch_type_from_string(const std::string& s);

// A sampled square window, anchored at its top-left corner.
struct PatchRef {
    std::string slide_id;
    int x = 0, y = 0;
    int size = 512;
    PatchType patch_type = PatchType::other_tissue;
};

struct SamplerConfig {
    int patch_size = 512;
    int min_corner_distance = 100;      // Euclidean, between top-left corners
    double spongiosis_threshold = 0.20; // strictly greater-than
    double epidermis_threshold = 0.40;  // epidermis+spongiosis combined, strict
    int quota_per_type = 50;
    int max_attempts_per_patch = 1000;  // per-type budget = this * quota
    int whiteness_tolerance = 0;        // 0 = background means exactly (255,255,255)
    uint64_t seed = 0;

    void validate() const;
};

// Patch typing rules, evaluated in order; first match wins:
//   1. background:   all pixels white
//   2. spongiosis:   > spongiosis_threshold of pixels are spongiosis
//   3. epidermis:    > epidermis_threshold of pixels are epidermis or spongiosis
//   4. other_tissue: fall-through
// The windows must be congruent. Depends only on per-class pixel fractions
// and whiteness, so it is invariant under pixel permutations.
PatchType classify_patch(const ImageU8& image_window, const ClassMask& mask_window,
                         const SamplerConfig& cfg);

// Window view variant used by extraction (no copies).
PatchType classify_window(const ImageU8& image, const ClassMask& mask, int y, int x,
                          int size, const SamplerConfig& cfg);

// Random top-left sampling with the global minimum-distance constraint and
// per-type quotas. Corners are uniform over valid positions; candidates that
// land too close to an accepted corner are rejected without consuming any
// type's attempt budget. Stops when every type reached its quota or ran out
// of attempts (a global draw cap prevents livelock on saturated slides).
std::vector<PatchRef> extract_patches(const SlideRecord& slide, const Manifest& manifest,
                                      const SamplerConfig& cfg, uint64_t seed);

// In-memory variant (tests and tools).
std::vector<PatchRef> extract_patches(const std::string& slide_id, const ImageU8& image,
                                      const ClassMask& mask, const SamplerConfig& cfg,
                                      uint64_t seed);

// Writes image/mask pairs plus an index file (one row per patch) to out_dir.
// Returns the index path.
std::string materialize_patches(const std::vector<PatchRef>& refs, const Manifest& manifest,
                                const std::string& out_dir);

struct PatchIndexRow {
    std::string slide_id;
    int x = 0, y = 0, size = 0;
    PatchType patch_type = PatchType::other_tissue;
    std::string image_file, mask_file;
};
std::vector<PatchIndexRow> load_patch_index(const std::string& index_path);

// Non-overlapping row-major tiling; edge windows are padded by edge
// replication so every window is tile x tile.
struct GridWindow {
    int y = 0, x = 0;        // source position
    int pad_y = 0, pad_x = 0;  // replicated margin on bottom/right
};
std::vector<GridWindow> grid_layout(int h, int w, int tile);
ImageU8 cut_window(const ImageU8& src, const GridWindow& win, int tile);
ClassMask cut_window(const ClassMask& src, const GridWindow& win, int tile);
std::vector<ImageU8> grid_cut(const ImageU8& src, int tile);
std::vector<ClassMask> grid_cut(const ClassMask& src, int tile);

}  // namespace mfe
