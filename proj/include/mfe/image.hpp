#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mfe {

// 8-bit raster, HWC. channels = 3 (RGB) or 1 (gray / class ids).
struct ImageU8 {
    int h = 0, w = 0, channels = 0;
    std::vector<uint8_t> px;

    ImageU8() = default;
    ImageU8(int h_, int w_, int c_, uint8_t fill = 0)
        : h(h_), w(w_), channels(c_),
          px(static_cast<size_t>(h_) * w_ * c_, fill) {}

    uint8_t& at(int y, int x, int c = 0) {
        return px[(static_cast<size_t>(y) * w + x) * channels + c];
    }
    uint8_t at(int y, int x, int c = 0) const {
        return px[(static_cast<size_t>(y) * w + x) * channels + c];
    }
    size_t size() const { return px.size(); }
};

// Per-pixel class grid over {0=rest, 1=epidermis, 2=spongiosis}.
class ClassMask {
public:
    static constexpr int kNumClasses = 3;

    ClassMask() = default;
    ClassMask(int h, int w, uint8_t fill = 0)
        : h_(h), w_(w), ids_(static_cast<size_t>(h) * w, fill) {}

    // validates every cell is a known class id
    static ClassMask from_raster(const ImageU8& raster);

    int h() const { return h_; }
    int w() const { return w_; }
    uint8_t& at(int y, int x) { return ids_[static_cast<size_t>(y) * w_ + x]; }
    uint8_t at(int y, int x) const { return ids_[static_cast<size_t>(y) * w_ + x]; }
    const std::vector<uint8_t>& ids() const { return ids_; }
    std::vector<uint8_t>& ids() { return ids_; }
    size_t size() const { return ids_.size(); }

    ImageU8 to_raster() const;

private:
    int h_ = 0, w_ = 0;
    std::vector<uint8_t> ids_;
};

// Lossless raster I/O. RGB images as binary PPM (P6), single-channel masks
// as binary PGM (P5). Throws std::runtime_error with the path on failure.
ImageU8 read_raster(const std::string& path);
void write_raster(const std::string& path, const ImageU8& img);

// header-only read: (height, width, channels) without loading pixels
struct RasterDims { int h = 0, w = 0, channels = 0; };
RasterDims read_raster_dims(const std::string& path);

// Bilinear resize for images (half-pixel centers), nearest-neighbor for
// masks (src = floor(dst * in/out), so downscale-by-2 keeps the top-left
// representative of each block and never invents class ids).
ImageU8 resize_bilinear(const ImageU8& src, int out_h, int out_w);
ClassMask resize_nearest(const ClassMask& src, int out_h, int out_w);

// k*90-degree CCW rotation / flips, applied identically to image and mask
ImageU8 rot90(const ImageU8& src, int k);
ImageU8 flip_ud(const ImageU8& src);
ImageU8 flip_lr(const ImageU8& src);

}  // namespace mfe
