#pragma once

#include <utility>
#include <vector>

#include "mfe/core_data.hpp"
#include "mfe/image.hpp"
#include "mfe/seg_net.hpp"

namespace mfe {

enum class ResizePolicy { nearest_multiple, ceil_multiple };

struct TileConfig {
    int tile_size = 256;  // must be a multiple of the model stride granularity (32)
    ResizePolicy resize_policy = ResizePolicy::nearest_multiple;
    int eval_downscale = 2;

    void validate() const;
};

// Tile-aligned dimensions. nearest_multiple maps each dim to
// round(dim/tile)*tile with ties rounding up and a floor of one tile;
// idempotent by construction.
std::pair<int, int> aligned_size(int w, int h, const TileConfig& cfg);

struct SlidePrediction {
    ClassMask mask;     // argmax over the stitched probabilities, aligned size
    Tensor probs;       // (1, H', W', C) stitched probability map
};

// Whole-slide inference: bilinear-resize the image to the aligned size, cut
// into a row-major tile grid, run the model per tile, stitch probabilities
// back (tiles partition the image exactly; stitching is order-independent),
// then argmax.
SlidePrediction predict_slide(SegModel& model, const ImageU8& slide_rgb,
                              const TileConfig& cfg);

// Half-size evaluation pair: masks are downscaled with nearest-neighbor
// (top-left representative of each 2x2 block), never interpolated.
struct EvalPair {
    ClassMask pred_half;
    ClassMask gt_half;
};
EvalPair eval_pair(const ClassMask& gt, const ClassMask& pred, const TileConfig& cfg);
// Variant that also produces the half-size image for report rendering.
EvalPair eval_pair(const ImageU8& slide_rgb, const ClassMask& gt, const ClassMask& pred,
                   const TileConfig& cfg, ImageU8* image_half);

// color overlay of a class mask using the manifest legend
ImageU8 colorize_mask(const ClassMask& mask, const std::vector<LegendEntry>& legend);

}  // namespace mfe
