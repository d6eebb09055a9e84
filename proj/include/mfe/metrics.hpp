#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfe/image.hpp"

namespace mfe {

// One-vs-rest confusion counts per class plus their sums. In this
// multi-class scheme every pixel contributes one TP or (one FP + one FN)
// and TN elsewhere, so the aggregate satisfies TP+FP = TP+FN = pixel count.
struct ConfusionCounts {
    int n_classes = 0;
    std::vector<uint64_t> tp, fp, fn, tn;  // per class

    explicit ConfusionCounts(int classes = 0)
        : n_classes(classes), tp(classes, 0), fp(classes, 0), fn(classes, 0), tn(classes, 0) {}

    uint64_t tp_sum() const;
    uint64_t fp_sum() const;
    uint64_t fn_sum() const;
    uint64_t tn_sum() const;

    ConfusionCounts& operator+=(const ConfusionCounts& o);
};

struct MetricVector {
    double precision = 0, recall = 0, f1 = 0, mcc = 0, mean_iou = 0, accuracy = 0;
    bool degenerate = false;  // some denominator was empty and a sentinel fired
};

// Count one-vs-rest confusions of pred against gt.
ConfusionCounts count(const ClassMask& pred, const ClassMask& gt, int n_classes);

// Aggregate (micro) metrics on summed counts. Division-by-zero sentinels:
// precision/recall/f1/mean_iou report 1.0 when there was nothing to find and
// nothing was found, 0.0 otherwise; mcc reports 0.0 on a zero denominator.
// Any sentinel sets the degenerate flag.
double precision(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate = nullptr);
double recall(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate = nullptr);
double f1_score(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate = nullptr);
double mcc(uint64_t tp, uint64_t fp, uint64_t fn, uint64_t tn, bool* degenerate = nullptr);
double mean_iou(uint64_t tp, uint64_t fp, uint64_t fn, bool* degenerate = nullptr);
double accuracy(uint64_t tp, uint64_t fp, uint64_t fn, uint64_t tn);

MetricVector evaluate(const ConfusionCounts& c);            // micro, on sums
MetricVector evaluate_class(const ConfusionCounts& c, int cls);  // one-vs-rest

// Per-class mean of one-vs-rest IoU; supplementary column, not the primary
// aggregate formulation.
double macro_mean_iou(const ConfusionCounts& c);

struct SlideMetrics {
    std::string slide_id;
    MetricVector micro;
    std::vector<MetricVector> per_class;
    double macro_iou = 0;
};

struct EvalReport {
    std::vector<SlideMetrics> slides;
    MetricVector mean, stddev;  // population std over slides
    double macro_iou_mean = 0, macro_iou_std = 0;
};

EvalReport make_report(const std::vector<SlideMetrics>& slides);

// percent rendering used by the tables: round half-up to integer percent
int to_percent(double v);

// Human-readable table: columns PPV/Precision, Sensitivity/Recall,
// Dice/F1, Matthews Correlation, Mean-IoU, Accuracy.
std::string render_report_table(const EvalReport& report, const std::string& row_label);

// Machine-readable JSON (raw reals per slide + aggregate block).
std::string report_to_json(const EvalReport& report, const std::string& model_label);

}  // namespace mfe
