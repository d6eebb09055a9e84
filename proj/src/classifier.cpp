#include "mfe/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mfe/metrics.hpp"
#include "mfe/tile_infer.hpp"

namespace mfe {

std::string to_string(ClfLoss l) { return l == ClfLoss::bce ? "bce" : "cosine"; }

ClfLoss clf_loss_from_string(const std::string& s) {
    if (s == "bce") return ClfLoss::bce;
    if (s == "cosine") return ClfLoss::cosine;
    throw std::runtime_error("unknown classifier loss '" + s + "'");
}

void ClfConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("clf config: field " + field + ": " + why);
    };
    if (input_size % 16 != 0) bad("input_size", "must be divisible by 16");
    if (with_seg_map && input_size % 32 != 0)
        bad("input_size", "must be divisible by 32 when with_seg_map is set");
    for (int c : conv_channels)
        if (c < 1) bad("conv_channels", "must be positive");
    if (fc_hidden < 1) bad("fc_hidden", "must be positive");
    if (threshold <= 0 || threshold >= 1) bad("threshold", "must be in (0,1)");
    if (folds < 2) bad("folds", "must be >= 2");
    if (epochs < 1) bad("epochs", "must be positive");
    if (batch_size < 1) bad("batch_size", "must be positive");
    if (base_lr <= 0) bad("base_lr", "must be positive");
}

ClfModel::ClfModel(const ClfConfig& cfg, int seg_classes, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    in_channels_ = cfg.with_seg_map ? 3 + seg_classes : 3;
    Rng rng(derive_seed(init_seed, 0x2u));
    nn::Graph& g = graph_;
    int node = 0;
    int cin = in_channels_;
    for (int stage = 0; stage < 4; ++stage) {
        const int cout = cfg.conv_channels[stage];
        node = g.add(std::make_unique<nn::Conv2d>(cin, cout, 3, 1, 1, true, rng), {node});
        node = g.add(std::make_unique<nn::ReLU>(), {node});
        node = g.add(std::make_unique<nn::MaxPool2x2>(), {node});
        cin = cout;
    }
    node = g.add(std::make_unique<nn::Flatten>(), {node});
    const int spatial = cfg.input_size / 16;
    const int flat = spatial * spatial * cin;
    node = g.add(std::make_unique<nn::Dense>(flat, cfg.fc_hidden, rng), {node});
    node = g.add(std::make_unique<nn::ReLU>(), {node});
    if (cfg.loss == ClfLoss::bce) {
        node = g.add(std::make_unique<nn::Dense>(cfg.fc_hidden, 1, rng), {node});
        g.add(std::make_unique<nn::Sigmoid>(), {node});
    } else {
        g.add(std::make_unique<nn::Dense>(cfg.fc_hidden, 2, rng), {node});
    }
}

bool ClfModel::predicts_mf(const float* head_out) const {
    if (cfg_.loss == ClfLoss::bce) return head_out[0] >= cfg_.threshold;
    return head_out[1] > head_out[0];  // index 1 = MF
}

double cosine_loss(const std::array<double, 2>& pred, const std::array<double, 2>& target) {
    constexpr double kEps = 1e-12;
    const double pn = std::max(std::sqrt(pred[0] * pred[0] + pred[1] * pred[1]), kEps);
    const double tn = std::max(std::sqrt(target[0] * target[0] + target[1] * target[1]), kEps);
    const double dot = pred[0] * target[0] + pred[1] * target[1];
    return 1.0 - dot / (pn * tn);
}

double cosine_loss_batch(const Tensor& pred, const std::vector<int>& targets, Tensor& dpred) {
    constexpr double kEps = 1e-12;
    const int b = pred.n();
    dpred.resize(b, 1, 1, 2);
    dpred.zero();
    double loss = 0;
    for (int i = 0; i < b; ++i) {
        const double p0 = pred.data()[2 * i], p1 = pred.data()[2 * i + 1];
        const double t0 = targets[i] == 1 ? 0.0 : 1.0;
        const double t1 = targets[i] == 1 ? 1.0 : 0.0;
        const double pn = std::max(std::sqrt(p0 * p0 + p1 * p1), kEps);
        const double dot = p0 * t0 + p1 * t1;
        loss += 1.0 - dot / pn;  // |t| = 1 for one-hot targets
        // d/dp of -(p.t)/|p| = -t/|p| + (p.t) p / |p|^3
        const double inv = 1.0 / pn;
        const double scale = dot * inv * inv * inv;
        dpred.data()[2 * i] = static_cast<float>((-t0 * inv + scale * p0) / b);
        dpred.data()[2 * i + 1] = static_cast<float>((-t1 * inv + scale * p1) / b);
    }
    return loss / b;
}

Tensor prepare_input(const ImageU8& slide_rgb, SegModel* seg_model, const ClfConfig& cfg) {
    cfg.validate();
    if (cfg.with_seg_map && !seg_model)
        throw std::invalid_argument("prepare_input: with_seg_map requires a segmentation model");
    const int s = cfg.input_size;
    const ImageU8 resized = resize_bilinear(slide_rgb, s, s);
    const int nc = cfg.with_seg_map ? seg_model->config().num_classes : 0;
    Tensor x(1, s, s, 3 + nc);
    for (int y = 0; y < s; ++y)
        for (int xx = 0; xx < s; ++xx) {
            float* dst = x.px(0, y, xx);
            for (int c = 0; c < 3; ++c)
                dst[c] = static_cast<float>(resized.at(y, xx, c)) / 255.0f;
        }
    if (cfg.with_seg_map) {
        TileConfig tc;
        tc.tile_size = s;  // single tile at the classifier resolution
        const SlidePrediction pred = predict_slide(*seg_model, resized, tc);
        for (int y = 0; y < s; ++y)
            for (int xx = 0; xx < s; ++xx) {
                float* dst = x.px(0, y, xx) + 3;
                if (cfg.hard_labels) {
                    for (int c = 0; c < nc; ++c) dst[c] = 0.0f;
                    dst[pred.mask.at(y, xx)] = 1.0f;
                } else {
                    const float* src = pred.probs.px(0, y, xx);
                    for (int c = 0; c < nc; ++c) dst[c] = src[c];
                }
            }
    }
    return x;
}

Tensor prepare_input(const SlideRecord& slide, const Manifest& manifest, SegModel* seg_model,
                     const ClfConfig& cfg) {
    const ImageU8 img = read_raster(manifest.resolve(slide.image_path));
    return prepare_input(img, seg_model, cfg);
}

namespace {

struct PreparedSlide {
    Tensor input;       // (1, s, s, c)
    int label = 0;      // 1 = MF
    int fold = 0;
    std::string slide_id;
};

FoldMetrics eval_fold(ClfModel& model, const std::vector<const PreparedSlide*>& eval_set,
                      int fold) {
    FoldMetrics fm;
    fm.fold = fold;
    fm.n_eval = eval_set.size();
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const PreparedSlide* s : eval_set) {
        const Tensor& out = model.forward(s->input, false);
        const bool mf = model.predicts_mf(out.data());
        if (mf && s->label == 1) ++tp;
        else if (mf && s->label == 0) ++fp;
        else if (!mf && s->label == 1) ++fn;
        else ++tn;
    }
    fm.accuracy = accuracy(tp, fp, fn, tn);
    fm.precision = precision(tp, fp, fn);
    fm.recall = recall(tp, fp, fn);
    fm.f1 = f1_score(tp, fp, fn);
    return fm;
}

void train_arm_fold(ClfModel& model, const std::vector<const PreparedSlide*>& train_set,
                    const ClfConfig& cfg, uint64_t seed) {
    nn::Adam adam;
    auto params = model.graph().params();
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Tensor batch, dout;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(seed, 0xC1F + static_cast<uint64_t>(epoch)));
        rng.shuffle(order.data(), order.size());
        for (size_t i = 0; i < order.size(); i += cfg.batch_size) {
            const size_t end = std::min(i + cfg.batch_size, order.size());
            const int bs = static_cast<int>(end - i);
            const Tensor& first = train_set[order[i]]->input;
            batch.resize(bs, first.h(), first.w(), first.c());
            std::vector<int> labels(bs);
            std::vector<float> targets(bs);
            for (int b = 0; b < bs; ++b) {
                const PreparedSlide* s = train_set[order[i + b]];
                std::copy_n(s->input.data(), s->input.size(),
                            batch.data() + static_cast<size_t>(b) * s->input.size());
                labels[b] = s->label;
                targets[b] = static_cast<float>(s->label);
            }
            const Tensor& out = model.forward(batch, true);
            double loss;
            if (cfg.loss == ClfLoss::bce) loss = nn::bce_loss(out, targets.data(), dout);
            else loss = cosine_loss_batch(out, labels, dout);
            (void)loss;
            model.graph().zero_grad();
            model.graph().backward(dout);
            adam.step(params, cfg.base_lr);
        }
    }
}

void finalize_arm(ClfArmReport& arm) {
    std::vector<const FoldMetrics*> kept;
    for (const auto& f : arm.folds)
        if (!f.skipped) kept.push_back(&f);
    if (kept.empty()) return;
    const double n = static_cast<double>(kept.size());
    auto agg = [&](auto get, double& mean, double& sd) {
        mean = 0;
        for (auto* f : kept) mean += get(*f);
        mean /= n;
        double var = 0;
        for (auto* f : kept) {
            const double d = get(*f) - mean;
            var += d * d;
        }
        sd = std::sqrt(var / n);
    };
    agg([](const FoldMetrics& f) { return f.accuracy; }, arm.acc_mean, arm.acc_std);
    agg([](const FoldMetrics& f) { return f.precision; }, arm.prec_mean, arm.prec_std);
    agg([](const FoldMetrics& f) { return f.recall; }, arm.rec_mean, arm.rec_std);
    agg([](const FoldMetrics& f) { return f.f1; }, arm.f1_mean, arm.f1_std);
}

ClfArmReport run_arm(const std::vector<PreparedSlide>& slides, const ClfConfig& cfg,
                     int seg_classes) {
    ClfArmReport arm;
    arm.loss = cfg.loss;
    arm.with_seg_map = cfg.with_seg_map;
    for (int fold = 0; fold < cfg.folds; ++fold) {
        std::vector<const PreparedSlide*> train_set, eval_set;
        for (const auto& s : slides)
            (s.fold == fold ? eval_set : train_set).push_back(&s);
        auto has_both = [](const std::vector<const PreparedSlide*>& v) {
            bool mf = false, e = false;
            for (auto* s : v) (s->label ? mf : e) = true;
            return mf && e;
        };
        FoldMetrics fm;
        fm.fold = fold;
        if (eval_set.empty() || !has_both(train_set)) {
            fm.skipped = true;
            std::fprintf(stderr, "warning: fold %d skipped (degenerate class makeup)\n", fold);
            arm.folds.push_back(fm);
            continue;
        }
        ClfModel model(cfg, seg_classes,
                       derive_seed(cfg.seed, 0xAB0 + static_cast<uint64_t>(fold)));
        train_arm_fold(model, train_set, cfg,
                       derive_seed(cfg.seed, 0x7F0 + static_cast<uint64_t>(fold)));
        arm.folds.push_back(eval_fold(model, eval_set, fold));
    }
    finalize_arm(arm);
    return arm;
}

std::vector<PreparedSlide> prepare_all(const Manifest& manifest, SegModel* seg_model,
                                       const ClfConfig& cfg, const SplitSpec& folds) {
    std::vector<PreparedSlide> out;
    for (const SlideRecord& rec : manifest.slides) {
        PreparedSlide p;
        p.slide_id = rec.slide_id;
        p.label = rec.disease == Disease::MF ? 1 : 0;
        p.fold = folds.assignment.at(rec.slide_id);
        p.input = prepare_input(rec, manifest, cfg.with_seg_map ? seg_model : nullptr, cfg);
        out.push_back(std::move(p));
    }
    return out;
}

void fill_baselines(const Manifest& manifest, ClfReport& report) {
    const auto [e, mf] = dummy_baselines(manifest);
    report.baseline_eczema_acc = e;
    report.baseline_mf_acc = mf;
}

}  // namespace

std::pair<double, double> dummy_baselines(const Manifest& manifest) {
    const double total = static_cast<double>(manifest.slides.size());
    return {static_cast<double>(manifest.count(Disease::Eczema)) / total,
            static_cast<double>(manifest.count(Disease::MF)) / total};
}

ClfReport run_cv(const Manifest& manifest, SegModel* seg_model, const ClfConfig& cfg) {
    cfg.validate();
    if (manifest.count(Disease::MF) == 0 || manifest.count(Disease::Eczema) == 0)
        throw std::invalid_argument("run_cv: both classes must be present");
    ClfReport report;
    report.fold_spec = make_folds(manifest, cfg.folds, cfg.seed);
    fill_baselines(manifest, report);
    const int seg_classes = seg_model ? seg_model->config().num_classes : 3;
    auto slides = prepare_all(manifest, seg_model, cfg, report.fold_spec);
    report.arms.push_back(run_arm(slides, cfg, seg_classes));
    return report;
}

ClfReport ablation(const Manifest& manifest, SegModel* seg_model, const ClfConfig& cfg) {
    cfg.validate();
    if (!seg_model) throw std::invalid_argument("ablation: segmentation model required");
    ClfReport report;
    report.fold_spec = make_folds(manifest, cfg.folds, cfg.seed);
    fill_baselines(manifest, report);
    const int seg_classes = seg_model->config().num_classes;

    ClfConfig with_cfg = cfg, without_cfg = cfg;
    with_cfg.with_seg_map = true;
    without_cfg.with_seg_map = false;
    const auto slides_with = prepare_all(manifest, seg_model, with_cfg, report.fold_spec);
    const auto slides_without = prepare_all(manifest, nullptr, without_cfg, report.fold_spec);

    for (ClfLoss loss : {ClfLoss::bce, ClfLoss::cosine}) {
        ClfConfig a = without_cfg;
        a.loss = loss;
        report.arms.push_back(run_arm(slides_without, a, seg_classes));
        ClfConfig b = with_cfg;
        b.loss = loss;
        report.arms.push_back(run_arm(slides_with, b, seg_classes));
    }
    return report;
}

std::string render_clf_table(const ClfReport& report) {
    std::ostringstream os;
    char buf[200];
    os << "                                Accuracy     Precision/PPV  Recall/Sensitivity  F1\n";
    std::snprintf(buf, sizeof buf, "Baseline Eczema                 %3d          -              -                   -\n",
                  to_percent(report.baseline_eczema_acc));
    os << buf;
    auto row = [&](const ClfArmReport& a) {
        std::snprintf(buf, sizeof buf,
                      "Model-%-7s %-17s %3d (+-%2d)   %3d (+-%2d)     %3d (+-%2d)          %3d (+-%2d)\n",
                      a.loss == ClfLoss::bce ? "BCE" : "Cosine",
                      a.with_seg_map ? "with seg map" : "w/o seg map", to_percent(a.acc_mean),
                      to_percent(a.acc_std), to_percent(a.prec_mean), to_percent(a.prec_std),
                      to_percent(a.rec_mean), to_percent(a.rec_std), to_percent(a.f1_mean),
                      to_percent(a.f1_std));
        os << buf;
    };
    for (const auto& a : report.arms)
        if (a.loss == ClfLoss::bce) row(a);
    std::snprintf(buf, sizeof buf, "Baseline MF                     %3d          -              -                   -\n",
                  to_percent(report.baseline_mf_acc));
    os << buf;
    for (const auto& a : report.arms)
        if (a.loss == ClfLoss::cosine) row(a);
    return os.str();
}

std::string clf_report_to_json(const ClfReport& report) {
    nlohmann::json j;
    j["baseline_eczema_accuracy"] = report.baseline_eczema_acc;
    j["baseline_mf_accuracy"] = report.baseline_mf_acc;
    j["folds"] = report.fold_spec.num_folds;
    j["arms"] = nlohmann::json::array();
    for (const auto& a : report.arms) {
        nlohmann::json ja;
        ja["loss"] = to_string(a.loss);
        ja["with_seg_map"] = a.with_seg_map;
        ja["accuracy_mean"] = a.acc_mean;
        ja["accuracy_std"] = a.acc_std;
        ja["precision_mean"] = a.prec_mean;
        ja["precision_std"] = a.prec_std;
        ja["recall_mean"] = a.rec_mean;
        ja["recall_std"] = a.rec_std;
        ja["f1_mean"] = a.f1_mean;
        ja["f1_std"] = a.f1_std;
        ja["per_fold"] = nlohmann::json::array();
        for (const auto& f : a.folds) {
            ja["per_fold"].push_back({{"fold", f.fold},
                                      {"skipped", f.skipped},
                                      {"n_eval", f.n_eval},
                                      {"accuracy", f.accuracy},
                                      {"precision", f.precision},
                                      {"recall", f.recall},
                                      {"f1", f.f1}});
        }
        j["arms"].push_back(ja);
    }
    return j.dump(2) + "\n";
}

}  // namespace mfe
