#include "mfe/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mfe/rng.hpp"

namespace fs = std::filesystem;

namespace mfe {

const char* to_string(PatchType t) {
    switch (t) {
        case PatchType::background: return "background";
        case PatchType::spongiosis: return "spongiosis";
        case PatchType::epidermis: return "epidermis";
        default: return "other_tissue";
    }
}

PatchType patch_type_from_string(const std::string& s) {
    if (s == "background") return PatchType::background;
    if (s == "spongiosis") return PatchType::spongiosis;
    if (s == "epidermis") return PatchType::epidermis;
    if (s == "other_tissue") return PatchType::other_tissue;
    throw std::runtime_error("unknown patch type '" + s + "'");
}

void SamplerConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("sampler config: field " + field + ": " + why);
    };
    if (patch_size <= 0) bad("patch_size", "must be positive");
    if (min_corner_distance < 0) bad("min_corner_distance", "must be non-negative");
    if (spongiosis_threshold <= 0 || spongiosis_threshold >= 1)
        bad("spongiosis_threshold", "must be in (0,1)");
    if (epidermis_threshold <= 0 || epidermis_threshold >= 1)
        bad("epidermis_threshold", "must be in (0,1)");
    if (quota_per_type <= 0) bad("quota_per_type", "must be positive");
    if (max_attempts_per_patch <= 0) bad("max_attempts_per_patch", "must be positive");
}

PatchType classify_window(const ImageU8& image, const ClassMask& mask, int y, int x,
                          int size, const SamplerConfig& cfg) {
    const int white_floor = 255 - cfg.whiteness_tolerance;
    bool all_white = true;
    for (int yy = y; yy < y + size && all_white; ++yy) {
        const uint8_t* row = image.px.data() + (static_cast<size_t>(yy) * image.w + x) * 3;
        for (int i = 0; i < size * 3; ++i)
            if (row[i] < white_floor) { all_white = false; break; }
    }
    if (all_white) return PatchType::background;

    size_t spongiosis = 0, epidermis = 0;
    for (int yy = y; yy < y + size; ++yy) {
        const uint8_t* row = mask.ids().data() + static_cast<size_t>(yy) * mask.w() + x;
        for (int i = 0; i < size; ++i) {
            spongiosis += row[i] == 2;
            epidermis += row[i] == 1;
        }
    }
    const double total = static_cast<double>(size) * size;
    if (static_cast<double>(spongiosis) / total > cfg.spongiosis_threshold)
        return PatchType::spongiosis;
    if (static_cast<double>(epidermis + spongiosis) / total > cfg.epidermis_threshold)
        return PatchType::epidermis;
    return PatchType::other_tissue;
}

PatchType classify_patch(const ImageU8& image_window, const ClassMask& mask_window,
                         const SamplerConfig& cfg) {
    if (image_window.h != mask_window.h() || image_window.w != mask_window.w())
        throw std::invalid_argument("classify_patch: image and mask windows differ in size");
    if (image_window.h != image_window.w)
        throw std::invalid_argument("classify_patch: window must be square");
    return classify_window(image_window, mask_window, 0, 0, image_window.h, cfg);
}

namespace {

// Summed-area tables over the whiteness and class indicators; window counts
// in O(1) per candidate. Semantics match classify_window exactly.
struct SlideTables {
    int h, w;
    std::vector<uint32_t> nonwhite, spongiosis, epidermis;  // (h+1)*(w+1)

    SlideTables(const ImageU8& image, const ClassMask& mask, int white_floor)
        : h(image.h), w(image.w) {
        const size_t stride = static_cast<size_t>(w) + 1;
        nonwhite.assign(stride * (h + 1), 0);
        spongiosis.assign(stride * (h + 1), 0);
        epidermis.assign(stride * (h + 1), 0);
        for (int y = 0; y < h; ++y) {
            uint32_t row_nw = 0, row_sp = 0, row_ep = 0;
            const uint8_t* ip = image.px.data() + static_cast<size_t>(y) * w * 3;
            const uint8_t* mp = mask.ids().data() + static_cast<size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                row_nw += ip[3 * x] < white_floor || ip[3 * x + 1] < white_floor ||
                          ip[3 * x + 2] < white_floor;
                row_sp += mp[x] == 2;
                row_ep += mp[x] == 1;
                const size_t i = (static_cast<size_t>(y) + 1) * stride + x + 1;
                const size_t up = static_cast<size_t>(y) * stride + x + 1;
                nonwhite[i] = nonwhite[up] + row_nw;
                spongiosis[i] = spongiosis[up] + row_sp;
                epidermis[i] = epidermis[up] + row_ep;
            }
        }
    }

    uint32_t window(const std::vector<uint32_t>& t, int y, int x, int size) const {
        const size_t stride = static_cast<size_t>(w) + 1;
        return t[(static_cast<size_t>(y) + size) * stride + x + size] -
               t[(static_cast<size_t>(y) + size) * stride + x] -
               t[static_cast<size_t>(y) * stride + x + size] +
               t[static_cast<size_t>(y) * stride + x];
    }

    PatchType classify(int y, int x, int size, const SamplerConfig& cfg) const {
        if (window(nonwhite, y, x, size) == 0) return PatchType::background;
        const double total = static_cast<double>(size) * size;
        const uint32_t sp = window(spongiosis, y, x, size);
        if (sp / total > cfg.spongiosis_threshold) return PatchType::spongiosis;
        const uint32_t ep = window(epidermis, y, x, size);
        if ((sp + ep) / total > cfg.epidermis_threshold) return PatchType::epidermis;
        return PatchType::other_tissue;
    }
};

}  // namespace

std::vector<PatchRef> extract_patches(const std::string& slide_id, const ImageU8& image,
                                      const ClassMask& mask, const SamplerConfig& cfg,
                                      uint64_t seed) {
    cfg.validate();
    if (image.h < cfg.patch_size || image.w < cfg.patch_size)
        throw std::invalid_argument("extract_patches: slide '" + slide_id +
                                    "' is smaller than patch_size");
    if (image.h != mask.h() || image.w != mask.w())
        throw std::invalid_argument("extract_patches: image and mask differ in size");

    const SlideTables tables(image, mask, 255 - cfg.whiteness_tolerance);
    Rng rng(seed);
    const int max_y = image.h - cfg.patch_size;
    const int max_x = image.w - cfg.patch_size;
    const int64_t min_d2 =
        static_cast<int64_t>(cfg.min_corner_distance) * cfg.min_corner_distance;

    std::vector<PatchRef> accepted;
    std::array<int, kNumPatchTypes> count{}, attempts{};
    const int64_t type_budget =
        static_cast<int64_t>(cfg.max_attempts_per_patch) * cfg.quota_per_type;
    const int64_t global_cap = type_budget * kNumPatchTypes;

    auto wanted = [&](int t) {
        return count[t] < cfg.quota_per_type && attempts[t] < type_budget;
    };
    auto any_wanted = [&] {
        for (int t = 0; t < kNumPatchTypes; ++t)
            if (wanted(t)) return true;
        return false;
    };

    for (int64_t draws = 0; draws < global_cap && any_wanted(); ++draws) {
        const int y = static_cast<int>(rng.next_below(static_cast<uint64_t>(max_y) + 1));
        const int x = static_cast<int>(rng.next_below(static_cast<uint64_t>(max_x) + 1));
        bool too_close = false;
        for (const PatchRef& p : accepted) {
            const int64_t dy = p.y - y, dx = p.x - x;
            if (dy * dy + dx * dx < min_d2) { too_close = true; break; }
        }
        if (too_close) continue;  // distance rejects do not consume attempt budget
        const PatchType t = tables.classify(y, x, cfg.patch_size, cfg);
        const int ti = static_cast<int>(t);
        ++attempts[ti];
        if (count[ti] < cfg.quota_per_type) {
            accepted.push_back({slide_id, x, y, cfg.patch_size, t});
            ++count[ti];
        }
    }
    return accepted;
}

std::vector<PatchRef> extract_patches(const SlideRecord& slide, const Manifest& manifest,
                                      const SamplerConfig& cfg, uint64_t seed) {
    if (!slide.has_mask())
        throw std::invalid_argument("extract_patches: slide '" + slide.slide_id +
                                    "' has no mask");
    const ImageU8 image = read_raster(manifest.resolve(slide.image_path));
    const ClassMask mask = ClassMask::from_raster(read_raster(manifest.resolve(slide.mask_path)));
    return extract_patches(slide.slide_id, image, mask, cfg, seed);
}

std::string materialize_patches(const std::vector<PatchRef>& refs, const Manifest& manifest,
                                const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("materialize: cannot create '" + out_dir + "'");

    // group refs per slide so each slide is loaded once
    std::map<std::string, std::vector<size_t>> by_slide;
    for (size_t i = 0; i < refs.size(); ++i) by_slide[refs[i].slide_id].push_back(i);

    std::vector<std::string> img_names(refs.size()), msk_names(refs.size());
    for (const auto& [slide_id, idxs] : by_slide) {
        const SlideRecord* rec = manifest.find(slide_id);
        if (!rec) throw std::runtime_error("materialize: slide '" + slide_id +
                                           "' not in manifest");
        const ImageU8 image = read_raster(manifest.resolve(rec->image_path));
        const ClassMask mask =
            ClassMask::from_raster(read_raster(manifest.resolve(rec->mask_path)));
        for (size_t i : idxs) {
            const PatchRef& r = refs[i];
            if (r.y < 0 || r.x < 0 || r.y + r.size > image.h || r.x + r.size > image.w)
                throw std::runtime_error("materialize: ref out of bounds on slide '" +
                                         slide_id + "'");
            ImageU8 pimg(r.size, r.size, 3);
            ImageU8 pmsk(r.size, r.size, 1);
            for (int y = 0; y < r.size; ++y) {
                std::copy_n(image.px.data() + ((static_cast<size_t>(r.y) + y) * image.w + r.x) * 3,
                            static_cast<size_t>(r.size) * 3,
                            pimg.px.data() + static_cast<size_t>(y) * r.size * 3);
                std::copy_n(mask.ids().data() + (static_cast<size_t>(r.y) + y) * mask.w() + r.x,
                            static_cast<size_t>(r.size),
                            pmsk.px.data() + static_cast<size_t>(y) * r.size);
            }
            char base[48];
            std::snprintf(base, sizeof base, "%05zu", i);
            img_names[i] = std::string("img_") + base + ".ppm";
            msk_names[i] = std::string("msk_") + base + ".pgm";
            write_raster((fs::path(out_dir) / img_names[i]).string(), pimg);
            write_raster((fs::path(out_dir) / msk_names[i]).string(), pmsk);
        }
    }

    const std::string index_path = (fs::path(out_dir) / "index.txt").string();
    std::ofstream out(index_path, std::ios::trunc);
    if (!out) throw std::runtime_error("materialize: cannot write index '" + index_path + "'");
    out << "mfe-patches 1\n";
    for (size_t i = 0; i < refs.size(); ++i)
        out << "patch " << refs[i].slide_id << " " << refs[i].x << " " << refs[i].y << " "
            << refs[i].size << " " << to_string(refs[i].patch_type) << " " << img_names[i]
            << " " << msk_names[i] << "\n";
    if (!out) throw std::runtime_error("materialize: write failed on '" + index_path + "'");
    return index_path;
}

std::vector<PatchIndexRow> load_patch_index(const std::string& index_path) {
    std::ifstream in(index_path);
    if (!in) throw std::runtime_error("patch index '" + index_path + "': cannot open");
    std::vector<PatchIndexRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "mfe-patches") continue;
        if (tag != "patch")
            throw std::runtime_error("patch index '" + index_path + "': unknown record '" +
                                     tag + "'");
        PatchIndexRow r;
        std::string type;
        if (!(ss >> r.slide_id >> r.x >> r.y >> r.size >> type >> r.image_file >> r.mask_file))
            throw std::runtime_error("patch index '" + index_path + "': malformed row");
        r.patch_type = patch_type_from_string(type);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<GridWindow> grid_layout(int h, int w, int tile) {
    if (tile <= 0) throw std::invalid_argument("grid_cut: tile must be positive");
    const int ny = (h + tile - 1) / tile;
    const int nx = (w + tile - 1) / tile;
    std::vector<GridWindow> out;
    out.reserve(static_cast<size_t>(ny) * nx);
    for (int ty = 0; ty < ny; ++ty)
        for (int tx = 0; tx < nx; ++tx) {
            GridWindow win;
            win.y = ty * tile;
            win.x = tx * tile;
            win.pad_y = std::max(0, win.y + tile - h);
            win.pad_x = std::max(0, win.x + tile - w);
            out.push_back(win);
        }
    return out;
}

ImageU8 cut_window(const ImageU8& src, const GridWindow& win, int tile) {
    ImageU8 out(tile, tile, src.channels);
    for (int y = 0; y < tile; ++y) {
        const int sy = std::min(win.y + y, src.h - 1);
        for (int x = 0; x < tile; ++x) {
            const int sx = std::min(win.x + x, src.w - 1);
            for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(sy, sx, c);
        }
    }
    return out;
}

ClassMask cut_window(const ClassMask& src, const GridWindow& win, int tile) {
    ClassMask out(tile, tile);
    for (int y = 0; y < tile; ++y) {
        const int sy = std::min(win.y + y, src.h() - 1);
        for (int x = 0; x < tile; ++x) {
            const int sx = std::min(win.x + x, src.w() - 1);
            out.at(y, x) = src.at(sy, sx);
        }
    }
    return out;
}

std::vector<ImageU8> grid_cut(const ImageU8& src, int tile) {
    std::vector<ImageU8> out;
    for (const GridWindow& win : grid_layout(src.h, src.w, tile))
        out.push_back(cut_window(src, win, tile));
    return out;
}

std::vector<ClassMask> grid_cut(const ClassMask& src, int tile) {
    std::vector<ClassMask> out;
    for (const GridWindow& win : grid_layout(src.h(), src.w(), tile))
        out.push_back(cut_window(src, win, tile));
    return out;
}

}  // namespace mfe
