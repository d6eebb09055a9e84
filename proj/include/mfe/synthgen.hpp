#pragma once

#include <map>
#include <string>

#include "mfe/core_data.hpp"
#include "mfe/image.hpp"

namespace mfe {

// Procedural histology-like slide generator. White background, textured
// tissue block, a curved epidermis band near the tissue top, spongiosis
// blobs clipped to the band. Disease signal is planted twice: MF slides get
// dense dark epidermal dots (image-only), Eczema slides get enlarged
// spongiosis area (visible in the mask), so a segmentation map carries real
// class information.
struct GenConfig {
    uint64_t seed = 42;
    int slide_h = 1024, slide_w = 1024;
    int n_patients = 10;
    int slides_per_patient_min = 1, slides_per_patient_max = 1;
    double mf_fraction = 60.0 / 164.0;
    // band thickness as a fraction of slide height
    double epidermis_band_min = 0.10, epidermis_band_max = 0.16;
    // vertical placement of the tissue top edge as a fraction of height
    double tissue_top = 0.35;
    int spongiosis_count_min = 2, spongiosis_count_max = 5;
    // blob radius as a fraction of slide height
    double spongiosis_radius_min = 0.02, spongiosis_radius_max = 0.045;
    double mf_dot_density = 1.5;       // dots per 1000 epidermis pixels (MF slides)
    double eczema_spongiosis_boost = 2.5;  // blob count multiplier for Eczema
    // per-slide stain jitter amplitude, 0..~20 (channel offset range)
    double stain_jitter = 12.0;

    void validate() const;  // throws std::invalid_argument naming the field
};

// Writes images/<id>.ppm, masks/<id>.pgm and manifest.txt under out_dir.
// Byte-identical output for identical (cfg.seed, cfg); per-slide generation
// is independent and runs in parallel.
Manifest generate_dataset(const GenConfig& cfg, const std::string& out_dir);

// In-memory variant for tests: one slide by (cfg, patient index, slide index).
struct SynthSlide {
    ImageU8 image;     // RGB
    ClassMask mask;
    Disease disease;
};
SynthSlide generate_slide(const GenConfig& cfg, int patient_idx, int slide_idx,
                          Disease disease);

// Fraction of pixels per class id; fractions sum to 1.
std::map<int, double> class_proportions(const ClassMask& mask);

}  // namespace mfe
