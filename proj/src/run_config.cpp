#include "mfe/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mfe {

namespace {

// typed field read with an error message that names the field
template <typename T>
void get_field(const json& j, const std::string& section, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw std::runtime_error("config: field " + section + "." + key + ": wrong type");
    }
}

void parse_gen(const json& j, GenConfig& g) {
    get_field(j, "gen", "seed", g.seed);
    get_field(j, "gen", "slide_h", g.slide_h);
    get_field(j, "gen", "slide_w", g.slide_w);
    get_field(j, "gen", "n_patients", g.n_patients);
    get_field(j, "gen", "slides_per_patient_min", g.slides_per_patient_min);
    get_field(j, "gen", "slides_per_patient_max", g.slides_per_patient_max);
    get_field(j, "gen", "mf_fraction", g.mf_fraction);
    get_field(j, "gen", "epidermis_band_min", g.epidermis_band_min);
    get_field(j, "gen", "epidermis_band_max", g.epidermis_band_max);
    get_field(j, "gen", "tissue_top", g.tissue_top);
    get_field(j, "gen", "spongiosis_count_min", g.spongiosis_count_min);
    get_field(j, "gen", "spongiosis_count_max", g.spongiosis_count_max);
    get_field(j, "gen", "spongiosis_radius_min", g.spongiosis_radius_min);
    get_field(j, "gen", "spongiosis_radius_max", g.spongiosis_radius_max);
    get_field(j, "gen", "mf_dot_density", g.mf_dot_density);
    get_field(j, "gen", "eczema_spongiosis_boost", g.eczema_spongiosis_boost);
    get_field(j, "gen", "stain_jitter", g.stain_jitter);
}

json gen_json(const GenConfig& g) {
    return {{"seed", g.seed},
            {"slide_h", g.slide_h},
            {"slide_w", g.slide_w},
            {"n_patients", g.n_patients},
            {"slides_per_patient_min", g.slides_per_patient_min},
            {"slides_per_patient_max", g.slides_per_patient_max},
            {"mf_fraction", g.mf_fraction},
            {"epidermis_band_min", g.epidermis_band_min},
            {"epidermis_band_max", g.epidermis_band_max},
            {"tissue_top", g.tissue_top},
            {"spongiosis_count_min", g.spongiosis_count_min},
            {"spongiosis_count_max", g.spongiosis_count_max},
            {"spongiosis_radius_min", g.spongiosis_radius_min},
            {"spongiosis_radius_max", g.spongiosis_radius_max},
            {"mf_dot_density", g.mf_dot_density},
            {"eczema_spongiosis_boost", g.eczema_spongiosis_boost},
            {"stain_jitter", g.stain_jitter}};
}

void parse_sampler(const json& j, SamplerConfig& s) {
    get_field(j, "sampler", "patch_size", s.patch_size);
    get_field(j, "sampler", "min_corner_distance", s.min_corner_distance);
    get_field(j, "sampler", "spongiosis_threshold", s.spongiosis_threshold);
    get_field(j, "sampler", "epidermis_threshold", s.epidermis_threshold);
    get_field(j, "sampler", "quota_per_type", s.quota_per_type);
    get_field(j, "sampler", "max_attempts_per_patch", s.max_attempts_per_patch);
    get_field(j, "sampler", "whiteness_tolerance", s.whiteness_tolerance);
    get_field(j, "sampler", "seed", s.seed);
}

json sampler_json(const SamplerConfig& s) {
    return {{"patch_size", s.patch_size},
            {"min_corner_distance", s.min_corner_distance},
            {"spongiosis_threshold", s.spongiosis_threshold},
            {"epidermis_threshold", s.epidermis_threshold},
            {"quota_per_type", s.quota_per_type},
            {"max_attempts_per_patch", s.max_attempts_per_patch},
            {"whiteness_tolerance", s.whiteness_tolerance},
            {"seed", s.seed}};
}

void parse_seg_model(const json& j, SegModelConfig& m) {
    std::string arch = to_string(m.arch), act;
    get_field(j, "seg_model", "arch", arch);
    m.arch = seg_arch_from_string(arch);
    get_field(j, "seg_model", "num_classes", m.num_classes);
    get_field(j, "seg_model", "input_size", m.input_size);
    get_field(j, "seg_model", "base_width", m.base_width);
    get_field(j, "seg_model", "depth_stages", m.depth_stages);
    get_field(j, "seg_model", "width_mult", m.width_mult);
    get_field(j, "seg_model", "depth_mult", m.depth_mult);
    get_field(j, "seg_model", "resolution_mult", m.resolution_mult);
    get_field(j, "seg_model", "final_activation", act);
    if (act == "sigmoid") m.final_activation = FinalAct::sigmoid;
    else if (act == "softmax" || act.empty()) m.final_activation = FinalAct::softmax;
    else throw std::runtime_error("config: field seg_model.final_activation: unknown value");
}

json seg_model_json(const SegModelConfig& m) {
    return {{"arch", to_string(m.arch)},
            {"num_classes", m.num_classes},
            {"input_size", m.input_size},
            {"base_width", m.base_width},
            {"depth_stages", m.depth_stages},
            {"width_mult", m.width_mult},
            {"depth_mult", m.depth_mult},
            {"resolution_mult", m.resolution_mult},
            {"final_activation", m.final_activation == FinalAct::softmax ? "softmax" : "sigmoid"}};
}

void parse_train(const json& j, TrainConfig& t) {
    get_field(j, "train", "batch_size", t.batch_size);
    get_field(j, "train", "epochs", t.epochs);
    get_field(j, "train", "base_lr", t.base_lr);
    get_field(j, "train", "decay_rate", t.decay_rate);
    get_field(j, "train", "decay_steps", t.decay_steps);
    std::string loss;
    get_field(j, "train", "loss", loss);
    if (loss == "dice") t.loss = SegLoss::dice;
    else if (loss == "combined") t.loss = SegLoss::combined;
    else if (loss == "cross_entropy" || loss.empty()) t.loss = SegLoss::cross_entropy;
    else throw std::runtime_error("config: field train.loss: unknown value");
    get_field(j, "train", "use_class_weights", t.use_class_weights);
    get_field(j, "train", "augment_rot90", t.augment_rot90);
    get_field(j, "train", "augment_flip_ud", t.augment_flip_ud);
    get_field(j, "train", "augment_flip_lr", t.augment_flip_lr);
    get_field(j, "train", "seed", t.seed);
    get_field(j, "train", "early_stop_miou", t.early_stop_miou);
}

json train_json(const TrainConfig& t) {
    const char* loss = t.loss == SegLoss::dice ? "dice"
                       : t.loss == SegLoss::combined ? "combined"
                                                     : "cross_entropy";
    return {{"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"base_lr", t.base_lr},
            {"decay_rate", t.decay_rate},
            {"decay_steps", t.decay_steps},
            {"loss", loss},
            {"use_class_weights", t.use_class_weights},
            {"augment_rot90", t.augment_rot90},
            {"augment_flip_ud", t.augment_flip_ud},
            {"augment_flip_lr", t.augment_flip_lr},
            {"seed", t.seed},
            {"early_stop_miou", t.early_stop_miou}};
}

void parse_tile(const json& j, TileConfig& t) {
    get_field(j, "tile", "tile_size", t.tile_size);
    std::string policy;
    get_field(j, "tile", "resize_policy", policy);
    if (policy == "ceil_multiple") t.resize_policy = ResizePolicy::ceil_multiple;
    else if (policy == "nearest_multiple" || policy.empty())
        t.resize_policy = ResizePolicy::nearest_multiple;
    else throw std::runtime_error("config: field tile.resize_policy: unknown value");
    get_field(j, "tile", "eval_downscale", t.eval_downscale);
}

json tile_json(const TileConfig& t) {
    return {{"tile_size", t.tile_size},
            {"resize_policy",
             t.resize_policy == ResizePolicy::nearest_multiple ? "nearest_multiple" : "ceil_multiple"},
            {"eval_downscale", t.eval_downscale}};
}

void parse_clf(const json& j, ClfConfig& c) {
    get_field(j, "clf", "with_seg_map", c.with_seg_map);
    std::string loss;
    get_field(j, "clf", "loss", loss);
    if (!loss.empty()) c.loss = clf_loss_from_string(loss);
    get_field(j, "clf", "input_size", c.input_size);
    if (j.contains("conv_channels")) {
        std::vector<int> ch;
        get_field(j, "clf", "conv_channels", ch);
        if (ch.size() != 4)
            throw std::runtime_error("config: field clf.conv_channels: want 4 entries");
        std::copy(ch.begin(), ch.end(), c.conv_channels.begin());
    }
    get_field(j, "clf", "fc_hidden", c.fc_hidden);
    get_field(j, "clf", "threshold", c.threshold);
    get_field(j, "clf", "folds", c.folds);
    get_field(j, "clf", "epochs", c.epochs);
    get_field(j, "clf", "batch_size", c.batch_size);
    get_field(j, "clf", "base_lr", c.base_lr);
    get_field(j, "clf", "hard_labels", c.hard_labels);
    get_field(j, "clf", "seed", c.seed);
}

json clf_json(const ClfConfig& c) {
    return {{"with_seg_map", c.with_seg_map},
            {"loss", to_string(c.loss)},
            {"input_size", c.input_size},
            {"conv_channels", std::vector<int>(c.conv_channels.begin(), c.conv_channels.end())},
            {"fc_hidden", c.fc_hidden},
            {"threshold", c.threshold},
            {"folds", c.folds},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"hard_labels", c.hard_labels},
            {"seed", c.seed}};
}

}  // namespace

std::string RunConfig::run_dir() const {
    return (fs::path(out_dir) / run_id).string();
}

std::string RunConfig::resolved_data_dir() const {
    if (!data_dir.empty()) return data_dir;
    if (const char* env = std::getenv("MFE_DATA_DIR"))
        return (fs::path(env) / run_id).string();
    return (fs::path(run_dir()) / "data").string();
}

void RunConfig::override_seed(uint64_t seed) {
    gen.seed = seed;
    split.seed = derive_seed(seed, 1);
    sampler.seed = derive_seed(seed, 2);
    train.seed = derive_seed(seed, 3);
    clf.seed = derive_seed(seed, 4);
}

void RunConfig::validate() const {
    if (run_id.empty() || run_id.find('/') != std::string::npos ||
        run_id.find("..") != std::string::npos)
        throw std::runtime_error("config: field run_id: must be a filesystem-safe name");
    const double s = split.fractions[0] + split.fractions[1] + split.fractions[2];
    if (std::abs(s - 1.0) > 1e-9)
        throw std::runtime_error("config: field split.fractions: must sum to 1");
    gen.validate();
    sampler.validate();
    seg_model.validate();
    train.validate();
    tile.validate();
    clf.validate();
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config '" + path + "': cannot open");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config '" + path + "': parse error: " + e.what());
    }
    RunConfig cfg;
    get_field(j, "", "run_id", cfg.run_id);
    get_field(j, "", "data_dir", cfg.data_dir);
    get_field(j, "", "out_dir", cfg.out_dir);
    if (j.contains("gen")) parse_gen(j["gen"], cfg.gen);
    if (j.contains("split")) {
        const json& js = j["split"];
        if (js.contains("fractions")) {
            std::vector<double> f;
            get_field(js, "split", "fractions", f);
            if (f.size() != 3)
                throw std::runtime_error("config: field split.fractions: want 3 entries");
            std::copy(f.begin(), f.end(), cfg.split.fractions.begin());
        }
        get_field(js, "split", "seed", cfg.split.seed);
    }
    if (j.contains("sampler")) parse_sampler(j["sampler"], cfg.sampler);
    if (j.contains("seg_model")) parse_seg_model(j["seg_model"], cfg.seg_model);
    if (j.contains("train")) parse_train(j["train"], cfg.train);
    if (j.contains("tile")) parse_tile(j["tile"], cfg.tile);
    if (j.contains("clf")) parse_clf(j["clf"], cfg.clf);
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["run_id"] = cfg.run_id;
    j["data_dir"] = cfg.data_dir;
    j["out_dir"] = cfg.out_dir;
    j["gen"] = gen_json(cfg.gen);
    j["split"] = {{"fractions", std::vector<double>(cfg.split.fractions.begin(),
                                                    cfg.split.fractions.end())},
                  {"seed", cfg.split.seed}};
    j["sampler"] = sampler_json(cfg.sampler);
    j["seg_model"] = seg_model_json(cfg.seg_model);
    j["train"] = train_json(cfg.train);
    j["tile"] = tile_json(cfg.tile);
    j["clf"] = clf_json(cfg.clf);
    return j.dump(2) + "\n";
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("config '" + path + "': cannot open for writing");
    out << run_config_to_json(cfg);
}

}  // namespace mfe
