#include "mfe/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mfe {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("raster '" + path + "': " + what);
}

// skips whitespace and '#' comments between header tokens
int next_header_int(std::istream& in, const std::string& path) {
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
        } else if (!isspace(ch)) {
            in.unget();
            break;
        }
    }
    int v = -1;
    if (!(in >> v) || v < 0) fail(path, "malformed header");
    return v;
}

}  // namespace

ClassMask ClassMask::from_raster(const ImageU8& raster) {
    if (raster.channels != 1)
        throw std::runtime_error("class mask raster must be single-channel");
    if (raster.h <= 0 || raster.w <= 0)
        throw std::runtime_error("class mask dimensions must be positive");
    ClassMask m(raster.h, raster.w);
    for (size_t i = 0; i < raster.px.size(); ++i) {
        if (raster.px[i] >= kNumClasses)
            throw std::runtime_error("class mask contains id " +
                                     std::to_string(raster.px[i]) +
                                     " outside {0,1,2}");
        m.ids_[i] = raster.px[i];
    }
    return m;
}

ImageU8 ClassMask::to_raster() const {
    ImageU8 img(h_, w_, 1);
    img.px = ids_;
    return img;
}

ImageU8 read_raster(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels;
    if (magic[0] == 'P' && magic[1] == '6') channels = 3;
    else if (magic[0] == 'P' && magic[1] == '5') channels = 1;
    else fail(path, "not a P5/P6 raster");

    int w = next_header_int(in, path);
    int h = next_header_int(in, path);
    int maxval = next_header_int(in, path);
    if (maxval != 255) fail(path, "maxval must be 255");
    in.get();  // single whitespace after maxval

    ImageU8 img(h, w, channels);
    in.read(reinterpret_cast<char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.px.size()))
        fail(path, "truncated pixel data");
    return img;
}

void write_raster(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        fail(path, "only 1- or 3-channel rasters supported");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for writing");
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()),
              static_cast<std::streamsize>(img.px.size()));
    if (!out) fail(path, "write failed");
}

RasterDims read_raster_dims(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    RasterDims d;
    if (magic[0] == 'P' && magic[1] == '6') d.channels = 3;
    else if (magic[0] == 'P' && magic[1] == '5') d.channels = 1;
    else fail(path, "not a P5/P6 raster");
    d.w = next_header_int(in, path);
    d.h = next_header_int(in, path);
    return d;
}

ImageU8 resize_bilinear(const ImageU8& src, int out_h, int out_w) {
    ImageU8 dst(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = y0 + 1;
        y0 = y0 < 0 ? 0 : (y0 >= src.h ? src.h - 1 : y0);
        y1 = y1 < 0 ? 0 : (y1 >= src.h ? src.h - 1 : y1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = x0 + 1;
            x0 = x0 < 0 ? 0 : (x0 >= src.w ? src.w - 1 : x0);
            x1 = x1 < 0 ? 0 : (x1 >= src.w ? src.w - 1 : x1);
            for (int c = 0; c < src.channels; ++c) {
                double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                           wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
                double r = std::floor(v + 0.5);
                dst.at(y, x, c) = static_cast<uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
            }
        }
    }
    return dst;
}

ClassMask resize_nearest(const ClassMask& src, int out_h, int out_w) {
    ClassMask dst(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        int sy = static_cast<int>(static_cast<int64_t>(y) * src.h() / out_h);
        for (int x = 0; x < out_w; ++x) {
            int sx = static_cast<int>(static_cast<int64_t>(x) * src.w() / out_w);
            dst.at(y, x) = src.at(sy, sx);
        }
    }
    return dst;
}

ImageU8 rot90(const ImageU8& src, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return src;
    int oh = (k % 2 == 0) ? src.h : src.w;
    int ow = (k % 2 == 0) ? src.w : src.h;
    ImageU8 dst(oh, ow, src.channels);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            int dy, dx;
            switch (k) {
                case 1: dy = src.w - 1 - x; dx = y; break;
                case 2: dy = src.h - 1 - y; dx = src.w - 1 - x; break;
                default: dy = x; dx = src.h - 1 - y; break;
            }
            for (int c = 0; c < src.channels; ++c)
                dst.at(dy, dx, c) = src.at(y, x, c);
        }
    return dst;
}

ImageU8 flip_ud(const ImageU8& src) {
    ImageU8 dst(src.h, src.w, src.channels);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < src.channels; ++c)
                dst.at(y, x, c) = src.at(src.h - 1 - y, x, c);
    return dst;
}

ImageU8 flip_lr(const ImageU8& src) {
    ImageU8 dst(src.h, src.w, src.channels);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < src.channels; ++c)
                dst.at(y, x, c) = src.at(y, src.w - 1 - x, c);
    return dst;
}

}  // namespace mfe
