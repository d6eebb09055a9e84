// mfe: end-to-end pipeline driver,
//   generate -> split -> extract -> train-seg -> predict -> eval
//            -> train-clf -> report
// Exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 runtime failure.

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfe/metrics.hpp"
#include "mfe/run_config.hpp"

namespace fs = std::filesystem;
using namespace mfe;

namespace {

constexpr int kOk = 0, kConfigError = 2, kMissingPrereq = 3, kRuntimeError = 4;

struct CliState {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> run_id, out_dir, data_dir, arch;
    bool no_clobber = false;
    int jobs = 0;
};

struct PrereqError {
    std::string message;
};
struct ClobberError {
    std::string message;
};

RunConfig load_config(const CliState& cli) {
    RunConfig cfg;
    if (!cli.config_path.empty()) cfg = load_run_config(cli.config_path);
    if (cli.run_id) cfg.run_id = *cli.run_id;
    if (cli.out_dir) cfg.out_dir = *cli.out_dir;
    if (cli.data_dir) cfg.data_dir = *cli.data_dir;
    if (cli.arch) cfg.seg_model.arch = seg_arch_from_string(*cli.arch);
    if (cli.seed) cfg.override_seed(*cli.seed);
    if (cli.jobs > 0) omp_set_num_threads(cli.jobs);
    cfg.validate();
    return cfg;
}

void snapshot_config(const RunConfig& cfg) {
    fs::create_directories(cfg.run_dir());
    save_run_config((fs::path(cfg.run_dir()) / "config.json").string(), cfg);
}

void require_absent(const fs::path& p, bool no_clobber) {
    if (no_clobber && fs::exists(p))
        throw ClobberError{"refusing to overwrite '" + p.string() + "' (--no-clobber)"};
}

Manifest require_manifest(const RunConfig& cfg) {
    const fs::path p = fs::path(cfg.resolved_data_dir()) / "manifest.txt";
    if (!fs::exists(p))
        throw PrereqError{"manifest '" + p.string() + "' not found; run 'mfe generate' first"};
    return load_manifest(p.string());
}

SplitSpec require_split(const RunConfig& cfg) {
    const fs::path p = fs::path(cfg.run_dir()) / "split.txt";
    if (!fs::exists(p))
        throw PrereqError{"split '" + p.string() + "' not found; run 'mfe split' first"};
    return load_split(p.string());
}

fs::path seg_dir(const RunConfig& cfg) {
    return fs::path(cfg.run_dir()) / ("seg_" + to_string(cfg.seg_model.arch));
}

fs::path pred_dir(const RunConfig& cfg) {
    return fs::path(cfg.run_dir()) / ("pred_" + to_string(cfg.seg_model.arch));
}

std::unique_ptr<SegModel> require_checkpoint(const RunConfig& cfg) {
    const fs::path p = seg_dir(cfg) / "best.ckpt";
    if (!fs::exists(p))
        throw PrereqError{"checkpoint '" + p.string() +
                          "' not found; run 'mfe train-seg' first"};
    return load_checkpoint(p.string());
}

// ------------------------------------------------------------- commands

int cmd_generate(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const std::string data = cfg.resolved_data_dir();
    require_absent(fs::path(data) / "manifest.txt", cli.no_clobber);
    snapshot_config(cfg);
    const Manifest m = generate_dataset(cfg.gen, data);
    std::cout << "generated " << m.slides.size() << " slides ("
              << m.count(Disease::MF) << " MF / " << m.count(Disease::Eczema)
              << " E) under " << data << "\n";
    return kOk;
}

int cmd_split(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const Manifest m = require_manifest(cfg);
    const fs::path out = fs::path(cfg.run_dir()) / "split.txt";
    require_absent(out, cli.no_clobber);
    snapshot_config(cfg);
    const SplitSpec spec = make_split(m, cfg.split.fractions, cfg.split.seed);
    save_split(out.string(), spec);
    std::cout << "split: train " << spec.slides_in(SplitSpec::kTrain).size() << ", val "
              << spec.slides_in(SplitSpec::kVal).size() << ", test "
              << spec.slides_in(SplitSpec::kTest).size() << " -> " << out.string() << "\n";
    return kOk;
}

// Grid positions for validation slides; the last window is shifted inward
// when the slide is not an exact multiple of the patch size.
std::vector<PatchRef> grid_refs(const SlideRecord& rec, int size) {
    std::vector<int> ys{0}, xs{0};
    for (int y = size; y + size <= rec.height_px; y += size) ys.push_back(y);
    if (ys.back() + size < rec.height_px) ys.push_back(rec.height_px - size);
    for (int x = size; x + size <= rec.width_px; x += size) xs.push_back(x);
    if (xs.back() + size < rec.width_px) xs.push_back(rec.width_px - size);
    std::vector<PatchRef> refs;
    for (int y : ys)
        for (int x : xs) refs.push_back({rec.slide_id, x, y, size, PatchType::other_tissue});
    return refs;
}

int cmd_extract(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const Manifest m = require_manifest(cfg);
    const SplitSpec split = require_split(cfg);
    const fs::path train_dir = fs::path(cfg.run_dir()) / "patches" / "train";
    const fs::path val_dir = fs::path(cfg.run_dir()) / "patches" / "val";
    require_absent(train_dir / "index.txt", cli.no_clobber);
    snapshot_config(cfg);

    std::vector<PatchRef> train_refs;
    size_t slide_idx = 0;
    for (const SlideRecord& rec : m.slides) {
        ++slide_idx;
        auto it = split.assignment.find(rec.slide_id);
        if (it == split.assignment.end() || it->second != SplitSpec::kTrain) continue;
        auto refs = extract_patches(rec, m, cfg.sampler,
                                    derive_seed(cfg.sampler.seed, slide_idx));
        train_refs.insert(train_refs.end(), refs.begin(), refs.end());
    }
    materialize_patches(train_refs, m, train_dir.string());

    std::vector<PatchRef> val_refs;
    for (const SlideRecord& rec : m.slides) {
        auto it = split.assignment.find(rec.slide_id);
        if (it == split.assignment.end() || it->second != SplitSpec::kVal) continue;
        auto refs = grid_refs(rec, cfg.sampler.patch_size);
        val_refs.insert(val_refs.end(), refs.begin(), refs.end());
    }
    materialize_patches(val_refs, m, val_dir.string());

    std::cout << "extracted " << train_refs.size() << " train patches, " << val_refs.size()
              << " validation windows\n";
    return kOk;
}

int cmd_train_seg(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const fs::path train_index = fs::path(cfg.run_dir()) / "patches" / "train" / "index.txt";
    const fs::path val_index = fs::path(cfg.run_dir()) / "patches" / "val" / "index.txt";
    if (!fs::exists(train_index))
        throw PrereqError{"patch index '" + train_index.string() +
                          "' not found; run 'mfe extract' first"};
    require_absent(seg_dir(cfg) / "best.ckpt", cli.no_clobber);
    snapshot_config(cfg);

    PatchDataset train_set = PatchDataset::from_index(train_index.string());
    PatchDataset val_set;
    if (fs::exists(val_index)) val_set = PatchDataset::from_index(val_index.string());

    auto model = build_seg_model(cfg.seg_model, cfg.train.seed);
    const TrainResult r =
        train_segmentation(*model, train_set, val_set, cfg.train, seg_dir(cfg).string());
    std::cout << "trained " << to_string(cfg.seg_model.arch) << " for "
              << r.history.size() << " epochs (" << r.steps << " steps); best val mean-IoU "
              << r.best_val_miou << " at epoch " << r.best_epoch << "\n";
    return kOk;
}

int cmd_predict(const CliState& cli, const std::string& which_split) {
    RunConfig cfg = load_config(cli);
    const Manifest m = require_manifest(cfg);
    const SplitSpec split = require_split(cfg);
    auto model = require_checkpoint(cfg);
    const fs::path out = pred_dir(cfg);
    require_absent(out, cli.no_clobber);
    snapshot_config(cfg);
    fs::create_directories(out);

    const int bucket = which_split == "val"   ? SplitSpec::kVal
                       : which_split == "train" ? SplitSpec::kTrain
                                                : SplitSpec::kTest;
    size_t done = 0;
    for (const SlideRecord& rec : m.slides) {
        auto it = split.assignment.find(rec.slide_id);
        if (it == split.assignment.end() || it->second != bucket) continue;
        const ImageU8 img = read_raster(m.resolve(rec.image_path));
        const SlidePrediction pred = predict_slide(*model, img, cfg.tile);
        write_raster((out / (rec.slide_id + ".pgm")).string(), pred.mask.to_raster());
        ++done;
    }
    std::cout << "predicted " << done << " " << which_split << " slides -> " << out.string()
              << "\n";
    return kOk;
}

int cmd_eval(const CliState& cli, const std::string& which_split, bool overlay) {
    RunConfig cfg = load_config(cli);
    const Manifest m = require_manifest(cfg);
    const SplitSpec split = require_split(cfg);
    const fs::path preds = pred_dir(cfg);
    if (!fs::exists(preds))
        throw PrereqError{"prediction directory '" + preds.string() +
                          "' not found; run 'mfe predict' first"};
    snapshot_config(cfg);

    const int bucket = which_split == "val"   ? SplitSpec::kVal
                       : which_split == "train" ? SplitSpec::kTrain
                                                : SplitSpec::kTest;
    std::vector<SlideMetrics> rows;
    for (const SlideRecord& rec : m.slides) {
        auto it = split.assignment.find(rec.slide_id);
        if (it == split.assignment.end() || it->second != bucket) continue;
        const fs::path pp = preds / (rec.slide_id + ".pgm");
        if (!fs::exists(pp))
            throw PrereqError{"prediction '" + pp.string() +
                              "' not found; run 'mfe predict' first"};
        if (!rec.has_mask()) continue;
        const ClassMask pred = ClassMask::from_raster(read_raster(pp.string()));
        ClassMask gt = ClassMask::from_raster(read_raster(m.resolve(rec.mask_path)));
        // ground truth follows the prediction onto the aligned grid
        // (nearest-neighbor only), then both drop to half size
        if (gt.h() != pred.h() || gt.w() != pred.w())
            gt = resize_nearest(gt, pred.h(), pred.w());
        const EvalPair pair = eval_pair(gt, pred, cfg.tile);
        const ConfusionCounts c =
            count(pair.pred_half, pair.gt_half, cfg.seg_model.num_classes);
        SlideMetrics sm;
        sm.slide_id = rec.slide_id;
        sm.micro = evaluate(c);
        for (int k = 0; k < c.n_classes; ++k) sm.per_class.push_back(evaluate_class(c, k));
        sm.macro_iou = macro_mean_iou(c);
        rows.push_back(std::move(sm));
        if (overlay) {
            const ImageU8 color = colorize_mask(pred, m.legend);
            write_raster((preds / (rec.slide_id + "_overlay.ppm")).string(), color);
        }
    }
    if (rows.empty()) throw PrereqError{"no annotated slides with predictions in split '" +
                                        which_split + "'"};
    const EvalReport report = make_report(rows);
    const fs::path rdir = fs::path(cfg.run_dir()) / "reports";
    fs::create_directories(rdir);
    const std::string label = to_string(cfg.seg_model.arch);
    std::ofstream((rdir / ("seg_" + label + ".json")).string())
        << report_to_json(report, label);
    std::ofstream((rdir / ("seg_" + label + ".txt")).string())
        << render_report_table(report, label + " (" + which_split + ")");
    std::cout << render_report_table(report, label + " (" + which_split + ")");
    return kOk;
}

int cmd_train_clf(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const Manifest m = require_manifest(cfg);
    std::unique_ptr<SegModel> seg;
    if (cfg.clf.with_seg_map) seg = require_checkpoint(cfg);
    const fs::path rdir = fs::path(cfg.run_dir()) / "reports";
    require_absent(rdir / "clf.json", cli.no_clobber);
    snapshot_config(cfg);

    const ClfReport report = ablation(m, seg.get(), cfg.clf);
    fs::create_directories(rdir);
    std::ofstream((rdir / "clf.json").string()) << clf_report_to_json(report);
    std::ofstream((rdir / "clf.txt").string()) << render_clf_table(report);
    std::cout << render_clf_table(report);
    return kOk;
}

int cmd_report(const CliState& cli) {
    RunConfig cfg = load_config(cli);
    const fs::path rdir = fs::path(cfg.run_dir()) / "reports";
    std::vector<fs::path> seg_reports;
    for (const char* arch : {"unet", "eunet"}) {
        const fs::path p = rdir / (std::string("seg_") + arch + ".txt");
        if (fs::exists(p)) seg_reports.push_back(p);
    }
    const fs::path clf_txt = rdir / "clf.txt";
    if (seg_reports.empty() && !fs::exists(clf_txt))
        throw PrereqError{"no reports under '" + rdir.string() +
                          "'; run 'mfe eval' and/or 'mfe train-clf' first"};

    std::ostringstream os;
    os << "== Segmentation (aggregate over evaluated slides) ==\n";
    for (const auto& p : seg_reports) {
        std::ifstream in(p.string());
        os << in.rdbuf();
    }
    os << "\n== Per-slide segmentation metrics ==\n";
    for (const char* arch : {"unet", "eunet"}) {
        const fs::path p = rdir / (std::string("seg_") + arch + ".json");
        if (!fs::exists(p)) continue;
        std::ifstream in(p.string());
        nlohmann::json j;
        in >> j;
        os << j["model"].get<std::string>() << ":\n";
        char buf[160];
        for (const auto& s : j["slides"]) {
            std::snprintf(buf, sizeof buf,
                          "  %-12s miou %5.1f%%  mcc %5.1f%%  acc %5.1f%%\n",
                          s["slide_id"].get<std::string>().c_str(),
                          s["micro"]["mean_iou"].get<double>() * 100,
                          s["micro"]["mcc"].get<double>() * 100,
                          s["micro"]["accuracy"].get<double>() * 100);
            os << buf;
        }
    }
    os << "\n== Classification (patient-grouped CV) ==\n";
    if (fs::exists(clf_txt)) {
        std::ifstream in(clf_txt.string());
        os << in.rdbuf();
    } else {
        os << "(no classification report)\n";
    }
    fs::create_directories(rdir);
    std::ofstream((rdir / "summary.txt").string()) << os.str();
    std::cout << os.str();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic skin-histology segmentation & classification pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // allow global flags after the subcommand name

    CliState cli;
    app.add_option("--config", cli.config_path, "run configuration JSON");
    uint64_t seed_val = 0;
    auto* seed_opt = app.add_option("--seed", seed_val, "master seed override");
    std::string run_id, out_dir, data_dir, arch;
    auto* run_opt = app.add_option("--run-id", run_id, "run identifier");
    auto* out_opt = app.add_option("--out", out_dir, "output directory root");
    auto* data_opt = app.add_option("--data-dir", data_dir,
                                    "dataset directory (default $MFE_DATA_DIR/<run-id>)");
    auto* arch_opt = app.add_option("--arch", arch, "segmentation arch override (unet|eunet)");
    app.add_flag("--no-clobber", cli.no_clobber, "refuse to overwrite existing artifacts");
    app.add_option("--jobs", cli.jobs, "OpenMP thread count");

    std::string predict_split = "test", eval_split = "test";
    bool overlay = false;

    auto* generate = app.add_subcommand("generate", "synthesize the dataset");
    auto* split = app.add_subcommand("split", "patient-grouped train/val/test split");
    auto* extract = app.add_subcommand("extract", "balanced patch extraction");
    auto* train_seg = app.add_subcommand("train-seg", "train the segmentation model");
    auto* predict = app.add_subcommand("predict", "tiled whole-slide inference");
    predict->add_option("--split", predict_split, "which split to predict (train|val|test)");
    auto* eval = app.add_subcommand("eval", "six-metric evaluation of predictions");
    eval->add_option("--split", eval_split, "which split to evaluate");
    eval->add_flag("--overlay", overlay, "write color-legend overlay rasters");
    auto* train_clf = app.add_subcommand("train-clf", "MF-vs-Eczema CV + ablation");
    auto* report = app.add_subcommand("report", "assemble the summary tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    if (*seed_opt) cli.seed = seed_val;
    if (*run_opt) cli.run_id = run_id;
    if (*out_opt) cli.out_dir = out_dir;
    if (*data_opt) cli.data_dir = data_dir;
    if (*arch_opt) cli.arch = arch;

    try {
        if (*generate) return cmd_generate(cli);
        if (*split) return cmd_split(cli);
        if (*extract) return cmd_extract(cli);
        if (*train_seg) return cmd_train_seg(cli);
        if (*predict) return cmd_predict(cli, predict_split);
        if (*eval) return cmd_eval(cli, eval_split, overlay);
        if (*train_clf) return cmd_train_clf(cli);
        if (*report) return cmd_report(cli);
    } catch (const PrereqError& e) {
        std::cerr << "error: " << e.message << "\n";
        return kMissingPrereq;
    } catch (const ClobberError& e) {
        std::cerr << "error: " << e.message << "\n";
        return kRuntimeError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        if (what.rfind("config", 0) == 0) {
            std::cerr << "config error: " << what << "\n";
            return kConfigError;
        }
        std::cerr << "error: " << what << "\n";
        return kRuntimeError;
    }
    return kConfigError;
}
