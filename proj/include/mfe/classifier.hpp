#pragma once

#include <array>
#include <memory>
#include <utility>
#include <optional>
#include <string>
#include <vector>

#include "mfe/core_data.hpp"
#include "mfe/nn.hpp"
#include "mfe/seg_net.hpp"

namespace mfe {

enum class ClfLoss { bce, cosine };

std::string to_string(ClfLoss l);
ClfLoss clf_loss_from_string(const std::string& s);

struct ClfConfig {
    bool with_seg_map = true;
    ClfLoss loss = ClfLoss::bce;
    int input_size = 256;                       // divisible by 16 (4 pooling stages)
    std::array<int, 4> conv_channels{16, 32, 64, 128};
    int fc_hidden = 128;
    double threshold = 0.5;                     // bce decision: MF iff score >= threshold
    int folds = 5;
    int epochs = 20;
    int batch_size = 4;
    double base_lr = 0.001;
    bool hard_labels = false;                   // feed argmax one-hot maps, not probabilities
    uint64_t seed = 0;

    void validate() const;
};

// 4x [3x3 conv + ReLU + 2x2 max-pool], flatten, FC-(fc_hidden) + ReLU, then
// either a 1-unit sigmoid head (bce) or a 2-unit linear head whose direction
// is trained with cosine loss against one-hot targets (index 1 = MF).
class ClfModel {
public:
    ClfModel(const ClfConfig& cfg, int seg_classes, uint64_t init_seed);
    const ClfConfig& config() const { return cfg_; }
    int in_channels() const { return in_channels_; }
    nn::Graph& graph() { return graph_; }
    size_t parameter_count() { return graph_.parameter_count(); }
    const Tensor& forward(const Tensor& batch, bool train = false) {
        return graph_.forward(batch, train);
    }
    // decision with MF as the positive class
    bool predicts_mf(const float* head_out) const;

private:
    ClfConfig cfg_;
    int in_channels_;
    nn::Graph graph_;
};

// 1 - cos(pred, target); pred is the raw 2-vector head output, target is
// one-hot. A norm floor keeps the zero vector defined.
double cosine_loss(const std::array<double, 2>& pred, const std::array<double, 2>& target);
// batched, with gradient w.r.t. pred; targets are class indices (1 = MF)
double cosine_loss_batch(const Tensor& pred, const std::vector<int>& targets, Tensor& dpred);

// Classifier input: slide image resized to input_size and scaled to [0,1];
// with_seg_map concatenates the segmentation probability channels predicted
// at the same size. Ground-truth masks are never touched.
Tensor prepare_input(const ImageU8& slide_rgb, SegModel* seg_model, const ClfConfig& cfg);
Tensor prepare_input(const SlideRecord& slide, const Manifest& manifest, SegModel* seg_model,
                     const ClfConfig& cfg);

struct FoldMetrics {
    int fold = 0;
    bool skipped = false;      // degenerate fold lacking a class
    size_t n_eval = 0;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

struct ClfArmReport {
    ClfLoss loss = ClfLoss::bce;
    bool with_seg_map = true;
    std::vector<FoldMetrics> folds;
    double acc_mean = 0, acc_std = 0;
    double prec_mean = 0, prec_std = 0;
    double rec_mean = 0, rec_std = 0;
    double f1_mean = 0, f1_std = 0;
};

struct ClfReport {
    double baseline_eczema_acc = 0;  // always-Eczema dummy accuracy
    double baseline_mf_acc = 0;      // always-MF dummy accuracy
    SplitSpec fold_spec;
    std::vector<ClfArmReport> arms;
};

// Dummy-baseline accuracies: always-Eczema and always-MF.
std::pair<double, double> dummy_baselines(const Manifest& manifest);

// Patient-grouped k-fold cross-validation of one (loss, with/without-map)
// arm: train on k-1 folds, evaluate the held-out fold, fixed hyperparameters
// throughout; emits per-fold and mean/std metrics plus the dummy baselines.
ClfReport run_cv(const Manifest& manifest, SegModel* seg_model, const ClfConfig& cfg);

// Ablation: the same folds and seeds for every arm; with/without the
// segmentation map for both loss variants (the Table-3-shaped report).
ClfReport ablation(const Manifest& manifest, SegModel* seg_model, const ClfConfig& cfg);

std::string render_clf_table(const ClfReport& report);
std::string clf_report_to_json(const ClfReport& report);

}  // namespace mfe
