#include "mfe/tile_infer.hpp"

#include <stdexcept>

#include "mfe/core_data.hpp"
#include "mfe/sampler.hpp"

namespace mfe {

void TileConfig::validate() const {
    if (tile_size <= 0 || tile_size % 32 != 0)
        throw std::invalid_argument("tile config: field tile_size: must be a positive multiple of 32");
    if (eval_downscale < 1)
        throw std::invalid_argument("tile config: field eval_downscale: must be >= 1");
}

namespace {
int align_dim(int dim, int tile, ResizePolicy policy) {
    if (policy == ResizePolicy::ceil_multiple) {
        const int n = (dim + tile - 1) / tile;
        return std::max(1, n) * tile;
    }
    const int q = dim / tile, r = dim % tile;
    int n = (2 * r >= tile) ? q + 1 : q;  // ties round up
    if (n < 1) n = 1;                     // one-tile floor
    return n * tile;
}
}  // namespace

std::pair<int, int> aligned_size(int w, int h, const TileConfig& cfg) {
    if (w < 1 || h < 1) throw std::invalid_argument("aligned_size: dims must be positive");
    return {align_dim(w, cfg.tile_size, cfg.resize_policy),
            align_dim(h, cfg.tile_size, cfg.resize_policy)};
}

SlidePrediction predict_slide(SegModel& model, const ImageU8& slide_rgb,
                              const TileConfig& cfg) {
    cfg.validate();
    if (slide_rgb.channels != 3)
        throw std::invalid_argument("predict_slide: slide must be RGB");
    const auto [aw, ah] = aligned_size(slide_rgb.w, slide_rgb.h, cfg);
    const ImageU8 resized =
        (aw == slide_rgb.w && ah == slide_rgb.h) ? slide_rgb
                                                 : resize_bilinear(slide_rgb, ah, aw);

    const int t = cfg.tile_size;
    const int nc = model.out_channels();
    SlidePrediction out;
    out.probs.resize(1, ah, aw, nc);

    Tensor tile_in(1, t, t, 3);
    for (const GridWindow& win : grid_layout(ah, aw, t)) {
        // aligned dims: no padding ever needed
        for (int y = 0; y < t; ++y)
            for (int x = 0; x < t; ++x)
                for (int c = 0; c < 3; ++c)
                    tile_in.at(0, y, x, c) =
                        static_cast<float>(resized.at(win.y + y, win.x + x, c)) / 255.0f;
        const Tensor& probs = model.forward(tile_in, false);
        for (int y = 0; y < t; ++y)
            for (int x = 0; x < t; ++x) {
                const float* src = probs.px(0, y, x);
                float* dst = out.probs.px(0, win.y + y, win.x + x);
                for (int c = 0; c < nc; ++c) dst[c] = src[c];
            }
    }

    out.mask = ClassMask(ah, aw);
    const bool sigmoid_head = model.config().final_activation == FinalAct::sigmoid;
    for (int y = 0; y < ah; ++y)
        for (int x = 0; x < aw; ++x) {
            const float* px = out.probs.px(0, y, x);
            if (sigmoid_head) {
                out.mask.at(y, x) = px[0] >= 0.5f ? 1 : 0;
            } else {
                int arg = 0;
                for (int c = 1; c < nc; ++c)
                    if (px[c] > px[arg]) arg = c;
                out.mask.at(y, x) = static_cast<uint8_t>(arg);
            }
        }
    return out;
}

EvalPair eval_pair(const ClassMask& gt, const ClassMask& pred, const TileConfig& cfg) {
    if (gt.h() != pred.h() || gt.w() != pred.w())
        throw std::invalid_argument("eval_pair: gt and pred shapes differ");
    const int oh = gt.h() / cfg.eval_downscale, ow = gt.w() / cfg.eval_downscale;
    EvalPair out;
    out.gt_half = resize_nearest(gt, oh, ow);
    out.pred_half = resize_nearest(pred, oh, ow);
    return out;
}

EvalPair eval_pair(const ImageU8& slide_rgb, const ClassMask& gt, const ClassMask& pred,
                   const TileConfig& cfg, ImageU8* image_half) {
    EvalPair out = eval_pair(gt, pred, cfg);
    if (image_half)
        *image_half = resize_bilinear(slide_rgb, slide_rgb.h / cfg.eval_downscale,
                                      slide_rgb.w / cfg.eval_downscale);
    return out;
}

ImageU8 colorize_mask(const ClassMask& mask, const std::vector<LegendEntry>& legend) {
    ImageU8 out(mask.h(), mask.w(), 3);
    std::array<std::array<uint8_t, 3>, 8> colors{};
    for (const LegendEntry& e : legend)
        if (e.class_id >= 0 && e.class_id < 8) colors[e.class_id] = e.rgb;
    for (int y = 0; y < mask.h(); ++y)
        for (int x = 0; x < mask.w(); ++x) {
            const auto& c = colors[mask.at(y, x)];
            out.at(y, x, 0) = c[0];
            out.at(y, x, 1) = c[1];
            out.at(y, x, 2) = c[2];
        }
    return out;
}

}  // namespace mfe
