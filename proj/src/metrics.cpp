#include "mfe/metrics.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mfe {

uint64_t ConfusionCounts::tp_sum() const { return std::accumulate(tp.begin(), tp.end(), uint64_t{0}); }
uint64_t ConfusionCounts::fp_sum() const { return std::accumulate(fp.begin(), fp.end(), uint64_t{0}); }
uint64_t ConfusionCounts::fn_sum() const { return std::accumulate(fn.begin(), fn.end(), uint64_t{0}); }
uint64_t ConfusionCounts::tn_sum() const { return std::accumulate(tn.begin(), tn.end(), uint64_t{0}); }

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    if (n_classes != o.n_classes)
        throw std::invalid_argument("confusion counts: class count mismatch");
    for (int c = 0; c < n_classes; ++c) {
        tp[c] += o.tp[c];
        fp[c] += o.fp[c];
        fn[c] += o.fn[c];
        tn[c] += o.tn[c];
    }
    return *this;
}

ConfusionCounts count(const ClassMask& pred, const ClassMask& gt, int n_classes) {
    if (pred.h() != gt.h() || pred.w() != gt.w())
        throw std::invalid_argument("count: pred and gt shapes differ");
    // per-pixel contingency table, then one-vs-rest counts per class
    std::vector<uint64_t> table(static_cast<size_t>(n_classes) * n_classes, 0);
    const uint8_t* p = pred.ids().data();
    const uint8_t* g = gt.ids().data();
    const size_t n = pred.size();
    for (size_t i = 0; i < n; ++i) {
        if (g[i] >= n_classes || p[i] >= n_classes)
            throw std::invalid_argument("count: class id out of range");
        ++table[static_cast<size_t>(g[i]) * n_classes + p[i]];
    }
    ConfusionCounts c(n_classes);
    for (int k = 0; k < n_classes; ++k) {
        uint64_t row = 0, col = 0;
        for (int j = 0; j < n_classes; ++j) {
            row += table[static_cast<size_t>(k) * n_classes + j];  // gt == k
            col += table[static_cast<size_t>(j) * n_classes + k];  // pred == k
        }
        const uint64_t diag = table[static_cast<size_t>(k) * n_classes + k];
        c.tp[k] = diag;
        c.fn[k] = row - diag;
        c.fp[k] = col - diag;
        c.tn[k] = n - row - col + diag;
    }
    return c;
}

namespace {
void flag(bool* degenerate) {
    if (degenerate) *degenerate = true;
}
}  // namespace

double precision(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate) {
    if (tp + fp == 0) {
        flag(degenerate);
        return fn == 0 ? 1.0 : 0.0;
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate) {
    if (tp + fn == 0) {
        flag(degenerate);
        return fp == 0 ? 1.0 : 0.0;
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1_score(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate) {
    const double p = precision(tp, fp, fn, degenerate);
    const double r = recall(tp, fp, fn, degenerate);
    if (p + r == 0.0) {
        flag(degenerate);
        return (fp == 0 && fn == 0) ? 1.0 : 0.0;
    }
    return 2.0 * p * r / (p + r);
}

double mcc(uint64_t tp, uint64_t fp, uint64_t fn, uint64_t tn, bool* degenerate) {
    const double d1 = static_cast<double>(tp + fp);
    const double d2 = static_cast<double>(tp + fn);
    const double d3 = static_cast<double>(tn + fp);
    const double d4 = static_cast<double>(tn + fn);
    const double den = std::sqrt(d1 * d2 * d3 * d4);
    if (den == 0.0) {
        flag(degenerate);
        return 0.0;
    }
    const double num = static_cast<double>(tp) * static_cast<double>(tn) -
                       static_cast<double>(fp) * static_cast<double>(fn);
    return num / den;
}

double mean_iou(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate) {
    if (tp + fp + fn == 0) {
        flag(degenerate);
        return 1.0;
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

double accuracy(uint64_t tp, uint64_t fp, uint64_t fn, uint64_t tn) {
    const uint64_t total = tp + fp + fn + tn;
    if (total == 0) throw std::invalid_argument("accuracy: empty counts");
    return static_cast<double>(tp + tn) / static_cast<double>(total);
}

namespace {
MetricVector evaluate_counts(uint64_t tp, uint64_t fp, uint64_t fn, uint64_t tn) {
    MetricVector m;
    m.precision = precision(tp, fp, fn, &m.degenerate);
    m.recall = recall(tp, fp, fn, &m.degenerate);
    m.f1 = f1_score(tp, fp, fn, &m.degenerate);
    m.mcc = mcc(tp, fp, fn, tn, &m.degenerate);
    m.mean_iou = mean_iou(tp, fp, fn, &m.degenerate);
    m.accuracy = accuracy(tp, fp, fn, tn);
    return m;
}
}  // namespace

MetricVector evaluate(const ConfusionCounts& c) {
    return evaluate_counts(c.tp_sum(), c.fp_sum(), c.fn_sum(), c.tn_sum());
}

MetricVector evaluate_class(const ConfusionCounts& c, int cls) {
    return evaluate_counts(c.tp[cls], c.fp[cls], c.fn[cls], c.tn[cls]);
}

double macro_mean_iou(const ConfusionCounts& c) {
    double sum = 0;
    for (int k = 0; k < c.n_classes; ++k) sum += mean_iou(c.tp[k], c.fp[k], c.fn[k]);
    return sum / c.n_classes;
}

EvalReport make_report(const std::vector<SlideMetrics>& slides) {
    if (slides.empty()) throw std::invalid_argument("report: no slides");
    EvalReport r;
    r.slides = slides;
    const double n = static_cast<double>(slides.size());

    auto agg = [&](auto getter, double& mean_out, double& std_out) {
        double mean = 0;
        for (const auto& s : slides) mean += getter(s);
        mean /= n;
        double var = 0;
        for (const auto& s : slides) {
            const double d = getter(s) - mean;
            var += d * d;
        }
        mean_out = mean;
        std_out = std::sqrt(var / n);  // population std, as in the tables
    };

    agg([](const SlideMetrics& s) { return s.micro.precision; }, r.mean.precision, r.stddev.precision);
    agg([](const SlideMetrics& s) { return s.micro.recall; }, r.mean.recall, r.stddev.recall);
    agg([](const SlideMetrics& s) { return s.micro.f1; }, r.mean.f1, r.stddev.f1);
    agg([](const SlideMetrics& s) { return s.micro.mcc; }, r.mean.mcc, r.stddev.mcc);
    agg([](const SlideMetrics& s) { return s.micro.mean_iou; }, r.mean.mean_iou, r.stddev.mean_iou);
    agg([](const SlideMetrics& s) { return s.micro.accuracy; }, r.mean.accuracy, r.stddev.accuracy);
    agg([](const SlideMetrics& s) { return s.macro_iou; }, r.macro_iou_mean, r.macro_iou_std);
    for (const auto& s : slides) r.mean.degenerate = r.mean.degenerate || s.micro.degenerate;
    return r;
}

int to_percent(double v) { return static_cast<int>(std::floor(v * 100.0 + 0.5)); }

std::string render_report_table(const EvalReport& report, const std::string& row_label) {
    std::ostringstream os;
    os << "                         PPV/Precision  Sensitivity/Recall  Dice/F1  "
          "Matthews  Mean-IoU  Accuracy\n";
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%-24s  %3d (+-%2d)     %3d (+-%2d)          %3d (+-%2d) %3d (+-%2d) "
                  "%3d (+-%2d) %3d (+-%2d)\n",
                  row_label.c_str(), to_percent(report.mean.precision),
                  to_percent(report.stddev.precision), to_percent(report.mean.recall),
                  to_percent(report.stddev.recall), to_percent(report.mean.f1),
                  to_percent(report.stddev.f1), to_percent(report.mean.mcc),
                  to_percent(report.stddev.mcc), to_percent(report.mean.mean_iou),
                  to_percent(report.stddev.mean_iou), to_percent(report.mean.accuracy),
                  to_percent(report.stddev.accuracy));
    os << buf;
    return os.str();
}

namespace {
nlohmann::json metric_json(const MetricVector& m) {
    return {{"precision", m.precision}, {"recall", m.recall},   {"f1", m.f1},
            {"mcc", m.mcc},             {"mean_iou", m.mean_iou}, {"accuracy", m.accuracy},
            {"degenerate", m.degenerate}};
}
}  // namespace

std::string report_to_json(const EvalReport& report, const std::string& model_label) {
    nlohmann::json j;
    j["model"] = model_label;
    j["slides"] = nlohmann::json::array();
    for (const auto& s : report.slides) {
        nlohmann::json js;
        js["slide_id"] = s.slide_id;
        js["micro"] = metric_json(s.micro);
        js["macro_iou"] = s.macro_iou;
        js["per_class"] = nlohmann::json::array();
        for (const auto& pc : s.per_class) js["per_class"].push_back(metric_json(pc));
        j["slides"].push_back(js);
    }
    j["mean"] = metric_json(report.mean);
    j["std"] = metric_json(report.stddev);
    j["macro_iou_mean"] = report.macro_iou_mean;
    j["macro_iou_std"] = report.macro_iou_std;
    return j.dump(2) + "\n";
}

}  // namespace mfe
