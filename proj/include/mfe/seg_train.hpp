#pragma once

#include <string>
#include <vector>

#include "mfe/image.hpp"
#include "mfe/seg_net.hpp"

namespace mfe {

enum class SegLoss { cross_entropy, dice, combined };

struct TrainConfig {
    int batch_size = 4;
    int epochs = 6;
    double base_lr = 0.001;
    double decay_rate = 0.96;
    int64_t decay_steps = 50000;
    SegLoss loss = SegLoss::cross_entropy;
    bool use_class_weights = false;  // inverse pixel-frequency weights
    bool augment_rot90 = true, augment_flip_ud = true, augment_flip_lr = true;
    uint64_t seed = 0;
    // stop as soon as validation mean-IoU reaches this (0 disables)
    double early_stop_miou = 0.0;

    void validate() const;
};

// Staircase schedule: base_lr * decay_rate^floor(step / decay_steps).
double lr_at(int64_t step, const TrainConfig& cfg);

// k*90-degree rotation with k uniform on {0..3}, then independent
// up-down / left-right flips with p=0.5 each; identical transform applied
// to image and mask. Pure pixel permutations: class histograms invariant.
struct AugmentDraw {
    int rot_k = 0;
    bool ud = false, lr = false;
};
AugmentDraw draw_augment(uint64_t seed, const TrainConfig& cfg);
void apply_augment(ImageU8& image, ClassMask& mask, const AugmentDraw& draw);
void augment(ImageU8& image, ClassMask& mask, uint64_t seed, const TrainConfig& cfg);

struct PatchSample {
    ImageU8 image;  // RGB
    ClassMask mask;
};

// In-memory patch dataset; loads eagerly from a materialized index.
struct PatchDataset {
    std::vector<PatchSample> samples;

    static PatchDataset from_index(const std::string& index_path);
    size_t size() const { return samples.size(); }
    int patch_size() const { return samples.empty() ? 0 : samples[0].image.h; }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_mean_iou = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_miou = 0;
    int best_epoch = -1;
    int64_t steps = 0;
};

// Shuffled mini-batch training with the staircase schedule and Adam.
// Validation mean-IoU (aggregate-count IoU) is computed each epoch; the
// best-by-validation checkpoint and a last checkpoint are written under
// run_dir (best.ckpt / last.ckpt, plus history.csv) when run_dir is
// non-empty. start_step continues the schedule from a resumed checkpoint.
TrainResult train_segmentation(SegModel& model, const PatchDataset& train_set,
                               const PatchDataset& val_set, const TrainConfig& cfg,
                               const std::string& run_dir = "", int64_t start_step = 0);

// aggregate-count mean-IoU of a model over a patch set
double validation_mean_iou(SegModel& model, const PatchDataset& val_set, int batch_size);

// per-pixel loss dispatch shared with the tests
double segmentation_loss(SegLoss kind, const Tensor& probs, const uint8_t* labels,
                         const float* class_weights, int n_classes, Tensor& dprobs);

}  // namespace mfe
