#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfe/image.hpp"

namespace mfe {

enum class Disease { MF, Eczema };

const char* to_string(Disease d);
Disease disease_from_string(const std::string& s);

// One slide: raster + optional class mask + patient identity + slide label.
struct SlideRecord {
    std::string slide_id;
    std::string patient_id;
    Disease disease = Disease::Eczema;
    std::string image_path;            // relative to the manifest directory
    std::string mask_path;             // empty = no annotation
    int width_px = 0, height_px = 0;

    bool has_mask() const { return !mask_path.empty(); }
};

struct LegendEntry {
    int class_id = 0;
    std::string name;
    std::array<uint8_t, 3> rgb{0, 0, 0};
};

struct Manifest {
    std::vector<SlideRecord> slides;
    uint64_t seed = 0;                 // generator seed (metadata)
    std::vector<LegendEntry> legend;   // class id -> name -> display color
    std::string base_dir;              // directory of the manifest file

    const SlideRecord* find(const std::string& slide_id) const;
    std::string resolve(const std::string& rel_path) const;
    size_t count(Disease d) const;
};

// Split assignment per slide: named split or fold index.
struct SplitSpec {
    enum class Kind { fractions, folds };
    Kind kind = Kind::fractions;
    uint64_t seed = 0;
    int num_folds = 0;                         // folds only
    std::array<double, 3> fractions{0, 0, 0};  // fractions only
    // fractions: 0=train 1=val 2=test; folds: fold index
    std::map<std::string, int> assignment;

    static constexpr int kTrain = 0, kVal = 1, kTest = 2;
    std::vector<std::string> slides_in(int bucket) const;
};

// Manifest file schema: line-oriented text, documented in the README.
// Validates all invariants, including on-disk raster dimensions.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& m);

SplitSpec load_split(const std::string& path);
void save_split(const std::string& path, const SplitSpec& s);

// Patient-grouped stratified split. Greedy quota fill over patients sorted
// by (class, slide count desc, seeded tiebreak): each patient goes to the
// split with the largest remaining quota for its class, so the per-split
// MF:Eczema slide ratio tracks the dataset ratio as closely as grouping
// allows. Deterministic in (manifest, fractions, seed).
SplitSpec make_split(const Manifest& manifest, const std::array<double, 3>& fractions,
                     uint64_t seed);

// Same scheme over k folds.
SplitSpec make_folds(const Manifest& manifest, int k, uint64_t seed);

}  // namespace mfe
