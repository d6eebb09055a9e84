#include "mfe/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mfe/rng.hpp"

namespace fs = std::filesystem;

namespace mfe {

namespace {

constexpr double kTau = 6.283185307179586;

struct Wave {
    double amp, freq, phase;
    double eval(double t) const { return amp * std::sin(kTau * (freq * t + phase)); }
};

Wave draw_wave(Rng& rng, double amp_lo, double amp_hi) {
    return {rng.next_double(amp_lo, amp_hi), rng.next_double(0.8, 2.4), rng.next_double(0, 1)};
}

uint8_t clamp_color(double v) {
    // tissue never reaches pure white; 255 is reserved for background
    return static_cast<uint8_t>(v < 0 ? 0 : (v > 250 ? 250 : v));
}

void paint(ImageU8& img, int y, int x, const double* base, const double* jit, Rng& rng,
           double noise_amp) {
    for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = clamp_color(base[c] + jit[c] + rng.next_double(-noise_amp, noise_amp));
}

}  // namespace

void GenConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("gen config: field " + field + ": " + why);
    };
    if (slide_h < 256 || slide_w < 256) bad("slide_size", "must be at least 256x256");
    if (n_patients < 1) bad("n_patients", "must be positive");
    if (slides_per_patient_min < 1 || slides_per_patient_max < slides_per_patient_min)
        bad("slides_per_patient", "range is empty");
    if (mf_fraction <= 0.0 || mf_fraction >= 1.0) bad("mf_fraction", "must be in (0,1)");
    if (epidermis_band_min <= 0 || epidermis_band_max < epidermis_band_min)
        bad("epidermis_band", "range is empty");
    if (tissue_top <= 0.05 || tissue_top + epidermis_band_max >= 0.9)
        bad("epidermis_band", "band does not fit the slide");
    if (spongiosis_count_min < 0 || spongiosis_count_max < spongiosis_count_min)
        bad("spongiosis_blob", "count range is empty");
    if (spongiosis_radius_min <= 0 || spongiosis_radius_max < spongiosis_radius_min)
        bad("spongiosis_blob", "radius range is empty");
    if (mf_dot_density < 0) bad("mf_dot_density", "must be non-negative");
    if (eczema_spongiosis_boost <= 0) bad("eczema_spongiosis_boost", "must be positive");
}

SynthSlide generate_slide(const GenConfig& cfg, int patient_idx, int slide_idx,
                          Disease disease) {
    const int H = cfg.slide_h, W = cfg.slide_w;
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(patient_idx) * 10007 +
                                      static_cast<uint64_t>(slide_idx) + 1));

    SynthSlide out;
    out.disease = disease;
    out.image = ImageU8(H, W, 3, 255);  // exact white background
    out.mask = ClassMask(H, W, 0);

    // geometry: tissue top curve, epidermis band, tissue bottom
    const Wave top_wave = draw_wave(rng, 0.01, 0.03);
    const double band_frac = rng.next_double(cfg.epidermis_band_min, cfg.epidermis_band_max);
    const Wave band_wave = draw_wave(rng, 0.004, 0.012);
    const double bottom_frac = rng.next_double(0.80, 0.88);
    const Wave bottom_wave = draw_wave(rng, 0.01, 0.03);

    std::vector<int> y_top(W), y_mid(W), y_bot(W);
    for (int x = 0; x < W; ++x) {
        const double t = static_cast<double>(x) / W;
        double yt = (cfg.tissue_top + top_wave.eval(t)) * H;
        double th = (band_frac + band_wave.eval(t)) * H;
        double yb = (bottom_frac + bottom_wave.eval(t)) * H;
        if (th < 2) th = 2;
        y_top[x] = std::max(0, std::min(H - 3, static_cast<int>(yt)));
        y_mid[x] = std::max(y_top[x] + 1, std::min(H - 2, static_cast<int>(yt + th)));
        y_bot[x] = std::max(y_mid[x] + 1, std::min(H - 1, static_cast<int>(yb)));
    }

    // per-slide stain jitter shared by all tissue colors
    double jit[3];
    for (double& j : jit) j = rng.next_double(-cfg.stain_jitter, cfg.stain_jitter);
    const double epidermis_rgb[3] = {150, 95, 165};
    const double dermis_rgb[3] = {225, 175, 195};
    const double spongiosis_rgb[3] = {195, 175, 220};
    const double dot_rgb[3] = {60, 30, 85};
    const double nucleus_rgb[3] = {185, 130, 155};

    for (int x = 0; x < W; ++x) {
        for (int y = y_top[x]; y < y_mid[x]; ++y) {
            out.mask.at(y, x) = 1;
            paint(out.image, y, x, epidermis_rgb, jit, rng, 14);
        }
        for (int y = y_mid[x]; y < y_bot[x]; ++y)
            paint(out.image, y, x, dermis_rgb, jit, rng, 14);
    }

    // spongiosis blobs, clipped to the epidermis band (mask 1 -> 2 only)
    int blob_count = rng.next_int(cfg.spongiosis_count_min, cfg.spongiosis_count_max);
    if (disease == Disease::Eczema)
        blob_count = static_cast<int>(std::lround(blob_count * cfg.eczema_spongiosis_boost));
    for (int b = 0; b < blob_count; ++b) {
        const int cx = rng.next_int(0, W - 1);
        const double band_h = y_mid[cx] - y_top[cx];
        const int cy = y_top[cx] + static_cast<int>(band_h * rng.next_double(0.3, 0.7));
        const double r = rng.next_double(cfg.spongiosis_radius_min, cfg.spongiosis_radius_max) * H;
        const double rx = r * rng.next_double(1.0, 1.6);
        const double ry = r * rng.next_double(0.5, 0.9);
        const int x0 = std::max(0, cx - static_cast<int>(rx) - 1);
        const int x1 = std::min(W - 1, cx + static_cast<int>(rx) + 1);
        const int yy0 = std::max(0, cy - static_cast<int>(ry) - 1);
        const int yy1 = std::min(H - 1, cy + static_cast<int>(ry) + 1);
        for (int y = yy0; y <= yy1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy <= 1.0 && out.mask.at(y, x) == 1) {
                    out.mask.at(y, x) = 2;
                    paint(out.image, y, x, spongiosis_rgb, jit, rng, 10);
                }
            }
    }

    // dermis nuclei texture, disease-independent
    {
        const int n_nuclei = (W * H) / 6000;
        for (int i = 0; i < n_nuclei; ++i) {
            const int x = rng.next_int(0, W - 1);
            if (y_bot[x] - y_mid[x] < 4) continue;
            const int y = rng.next_int(y_mid[x] + 1, y_bot[x] - 1);
            paint(out.image, y, x, nucleus_rgb, jit, rng, 12);
            if (x + 1 < W && out.mask.at(y, x + 1) == 0 && y < y_bot[x + 1] && y >= y_mid[x + 1])
                paint(out.image, y, x + 1, nucleus_rgb, jit, rng, 12);
        }
    }

    // epidermal dots: the MF image-level signal
    {
        size_t epi_px = 0;
        for (int x = 0; x < W; ++x) epi_px += static_cast<size_t>(y_mid[x] - y_top[x]);
        const double density =
            disease == Disease::MF ? cfg.mf_dot_density : cfg.mf_dot_density * 0.15;
        const int n_dots = static_cast<int>(std::lround(density * (static_cast<double>(epi_px) / 1000.0)));
        for (int i = 0; i < n_dots; ++i) {
            const int x = rng.next_int(0, W - 1);
            if (y_mid[x] - y_top[x] < 3) continue;
            const int y = rng.next_int(y_top[x] + 1, y_mid[x] - 1);
            const int rad = rng.next_int(1, 2);
            for (int dy = -rad; dy <= rad; ++dy)
                for (int dx = -rad; dx <= rad; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    if (dx * dx + dy * dy > rad * rad) continue;
                    if (out.mask.at(yy, xx) == 1)
                        paint(out.image, yy, xx, dot_rgb, jit, rng, 8);
                }
        }
    }
    return out;
}

Manifest generate_dataset(const GenConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw std::runtime_error("gen: cannot create output directories under '" +
                                     out_dir + "': " + ec.message());

    // deterministic patient plan: diseases and slide counts
    const int mf_count = static_cast<int>(std::lround(cfg.n_patients * cfg.mf_fraction));
    std::vector<int> order(cfg.n_patients);
    for (int i = 0; i < cfg.n_patients; ++i) order[i] = i;
    Rng plan_rng(derive_seed(cfg.seed, 0));
    plan_rng.shuffle(order.data(), order.size());
    std::vector<Disease> patient_disease(cfg.n_patients, Disease::Eczema);
    for (int i = 0; i < mf_count; ++i) patient_disease[order[i]] = Disease::MF;

    struct Plan {
        int patient_idx, slide_idx;
        Disease disease;
        std::string slide_id, patient_id;
    };
    std::vector<Plan> plan;
    for (int p = 0; p < cfg.n_patients; ++p) {
        Rng prng(derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(p)));
        const int n_slides = prng.next_int(cfg.slides_per_patient_min, cfg.slides_per_patient_max);
        for (int s = 0; s < n_slides; ++s) {
            Plan pl;
            pl.patient_idx = p;
            pl.slide_idx = s;
            pl.disease = patient_disease[p];
            char pid[16], sid[24];
            std::snprintf(pid, sizeof pid, "p%03d", p);
            std::snprintf(sid, sizeof sid, "s%03d_%02d", p, s);
            pl.patient_id = pid;
            pl.slide_id = sid;
            plan.push_back(std::move(pl));
        }
    }

    // distinct slides write distinct files; order-independent content
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < plan.size(); ++i) {
        const Plan& pl = plan[i];
        SynthSlide slide = generate_slide(cfg, pl.patient_idx, pl.slide_idx, pl.disease);
        write_raster((fs::path(out_dir) / "images" / (pl.slide_id + ".ppm")).string(),
                     slide.image);
        write_raster((fs::path(out_dir) / "masks" / (pl.slide_id + ".pgm")).string(),
                     slide.mask.to_raster());
    }

    Manifest m;
    m.seed = cfg.seed;
    m.base_dir = out_dir;
    m.legend = {{0, "rest", {255, 255, 255}},
                {1, "epidermis", {150, 95, 165}},
                {2, "spongiosis", {195, 175, 220}}};
    for (const Plan& pl : plan) {
        SlideRecord rec;
        rec.slide_id = pl.slide_id;
        rec.patient_id = pl.patient_id;
        rec.disease = pl.disease;
        rec.image_path = "images/" + pl.slide_id + ".ppm";
        rec.mask_path = "masks/" + pl.slide_id + ".pgm";
        rec.width_px = cfg.slide_w;
        rec.height_px = cfg.slide_h;
        m.slides.push_back(std::move(rec));
    }
    save_manifest((fs::path(out_dir) / "manifest.txt").string(), m);
    return m;
}

std::map<int, double> class_proportions(const ClassMask& mask) {
    size_t counts[ClassMask::kNumClasses] = {0, 0, 0};
    for (uint8_t id : mask.ids()) ++counts[id];
    const double total = static_cast<double>(mask.size());
    std::map<int, double> out;
    for (int c = 0; c < ClassMask::kNumClasses; ++c)
        out[c] = static_cast<double>(counts[c]) / total;
    return out;
}

}  // namespace mfe
