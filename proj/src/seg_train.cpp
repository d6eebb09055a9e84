#include "mfe/seg_train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mfe/metrics.hpp"
#include "mfe/sampler.hpp"

namespace fs = std::filesystem;

namespace mfe {

void TrainConfig::validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("train config: field " + field + ": " + why);
    };
    if (batch_size < 1) bad("batch_size", "must be positive");
    if (epochs < 1) bad("epochs", "must be positive");
    if (base_lr <= 0) bad("base_lr", "must be positive");
    if (decay_rate <= 0 || decay_rate > 1) bad("decay_rate", "must be in (0,1]");
    if (decay_steps < 1) bad("decay_steps", "must be >= 1");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    const double k = static_cast<double>(step / cfg.decay_steps);
    return cfg.base_lr * std::pow(cfg.decay_rate, k);
}

AugmentDraw draw_augment(uint64_t seed, const TrainConfig& cfg) {
    Rng rng(seed);
    AugmentDraw d;
    d.rot_k = cfg.augment_rot90 ? static_cast<int>(rng.next_below(4)) : 0;
    d.ud = cfg.augment_flip_ud && rng.next_double() < 0.5;
    d.lr = cfg.augment_flip_lr && rng.next_double() < 0.5;
    return d;
}

void apply_augment(ImageU8& image, ClassMask& mask, const AugmentDraw& d) {
    ImageU8 m = mask.to_raster();
    if (d.rot_k != 0) {
        image = rot90(image, d.rot_k);
        m = rot90(m, d.rot_k);
    }
    if (d.ud) {
        image = flip_ud(image);
        m = flip_ud(m);
    }
    if (d.lr) {
        image = flip_lr(image);
        m = flip_lr(m);
    }
    mask = ClassMask::from_raster(m);
}

void augment(ImageU8& image, ClassMask& mask, uint64_t seed, const TrainConfig& cfg) {
    if (image.h != mask.h() || image.w != mask.w())
        throw std::invalid_argument("augment: image and mask differ in size");
    apply_augment(image, mask, draw_augment(seed, cfg));
}

PatchDataset PatchDataset::from_index(const std::string& index_path) {
    PatchDataset ds;
    const fs::path dir = fs::path(index_path).parent_path();
    for (const PatchIndexRow& row : load_patch_index(index_path)) {
        PatchSample s;
        s.image = read_raster((dir / row.image_file).string());
        s.mask = ClassMask::from_raster(read_raster((dir / row.mask_file).string()));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

namespace {

void fill_batch(const std::vector<const PatchSample*>& items, Tensor& x,
                std::vector<uint8_t>& labels) {
    const int s = items[0]->image.h;
    x.resize(static_cast<int>(items.size()), s, s, 3);
    labels.resize(items.size() * static_cast<size_t>(s) * s);
    for (size_t i = 0; i < items.size(); ++i) {
        const ImageU8& img = items[i]->image;
        float* dst = x.data() + i * static_cast<size_t>(s) * s * 3;
        for (size_t j = 0; j < img.px.size(); ++j)
            dst[j] = static_cast<float>(img.px[j]) * (1.0f / 255.0f);
        std::copy(items[i]->mask.ids().begin(), items[i]->mask.ids().end(),
                  labels.begin() + i * static_cast<size_t>(s) * s);
    }
}

// soft dice over probability maps, averaged across classes
double dice_loss(const Tensor& probs, const uint8_t* labels, Tensor& dprobs) {
    const int c = probs.c();
    const size_t rows = probs.size() / c;
    constexpr double kEps = 1.0;
    std::vector<double> inter(c, 0.0), psum(c, 0.0), ysum(c, 0.0);
    for (size_t r = 0; r < rows; ++r) {
        const float* p = probs.data() + r * c;
        const int y = labels[r];
        for (int j = 0; j < c; ++j) {
            psum[j] += static_cast<double>(p[j]) * p[j];
            if (j == y) {
                inter[j] += p[j];
                ysum[j] += 1.0;
            }
        }
    }
    double loss = 0.0;
    std::vector<double> num(c), den(c);
    for (int j = 0; j < c; ++j) {
        num[j] = 2.0 * inter[j] + kEps;
        den[j] = psum[j] + ysum[j] + kEps;
        loss += 1.0 - num[j] / den[j];
    }
    loss /= c;
    dprobs.resize(probs.n(), probs.h(), probs.w(), c);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* p = probs.data() + r * c;
        float* d = dprobs.data() + r * c;
        const int y = labels[r];
        for (int j = 0; j < c; ++j) {
            const double dnum = (j == y) ? 2.0 : 0.0;
            const double dden = 2.0 * p[j];
            d[j] = static_cast<float>(-(dnum * den[j] - num[j] * dden) / (den[j] * den[j]) / c);
        }
    }
    return loss;
}

}  // namespace

double segmentation_loss(SegLoss kind, const Tensor& probs, const uint8_t* labels,
                         const float* class_weights, int n_classes, Tensor& dprobs) {
    switch (kind) {
        case SegLoss::cross_entropy:
            return nn::nll_loss(probs, labels, class_weights, n_classes, dprobs);
        case SegLoss::dice:
            return dice_loss(probs, labels, dprobs);
        default: {
            Tensor d2;
            const double l1 = nn::nll_loss(probs, labels, class_weights, n_classes, dprobs);
            const double l2 = dice_loss(probs, labels, d2);
            for (size_t i = 0; i < dprobs.size(); ++i) dprobs.data()[i] += d2.data()[i];
            return l1 + l2;
        }
    }
}

double validation_mean_iou(SegModel& model, const PatchDataset& val_set, int batch_size) {
    if (val_set.size() == 0) return 0.0;
    const int nc = model.config().num_classes;
    ConfusionCounts total(nc);
    Tensor x;
    std::vector<uint8_t> labels;
    for (size_t i = 0; i < val_set.size(); i += batch_size) {
        std::vector<const PatchSample*> items;
        for (size_t j = i; j < std::min(i + batch_size, val_set.size()); ++j)
            items.push_back(&val_set.samples[j]);
        fill_batch(items, x, labels);
        const Tensor& probs = model.forward(x, false);
        const int s = probs.h();
        for (size_t b = 0; b < items.size(); ++b) {
            ClassMask pred(s, s);
            for (int y = 0; y < s; ++y)
                for (int xx = 0; xx < s; ++xx) {
                    const float* px = probs.px(static_cast<int>(b), y, xx);
                    int arg = 0;
                    for (int j = 1; j < probs.c(); ++j)
                        if (px[j] > px[arg]) arg = j;
                    pred.at(y, xx) = static_cast<uint8_t>(arg);
                }
            total += count(pred, items[b]->mask, nc);
        }
    }
    return mean_iou(total.tp_sum(), total.fp_sum(), total.fn_sum());
}

TrainResult train_segmentation(SegModel& model, const PatchDataset& train_set,
                               const PatchDataset& val_set, const TrainConfig& cfg,
                               const std::string& run_dir, int64_t start_step) {
    cfg.validate();
    if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
    const int nc = model.config().num_classes;
    for (const auto& s : train_set.samples)
        for (uint8_t id : s.mask.ids())
            if (id >= nc)
                throw std::invalid_argument("train: mask class id " + std::to_string(id) +
                                            " exceeds model classes");

    // optional inverse-frequency class weights from the training pixels
    std::vector<float> weights;
    if (cfg.use_class_weights) {
        std::vector<uint64_t> counts(nc, 1);
        for (const auto& s : train_set.samples)
            for (uint8_t id : s.mask.ids()) ++counts[id];
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        weights.resize(nc);
        for (int c = 0; c < nc; ++c)
            weights[c] = static_cast<float>(total / (nc * static_cast<double>(counts[c])));
    }

    if (!run_dir.empty()) fs::create_directories(run_dir);

    nn::Adam adam;
    adam.set_steps_done(start_step);
    auto params = model.graph().params();

    TrainResult result;
    int64_t step = start_step;
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    Tensor x, dprobs;
    std::vector<uint8_t> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE001 + static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order.data(), order.size());

        double loss_sum = 0;
        int64_t batches = 0;
        for (size_t i = 0; i + 1 <= order.size(); i += cfg.batch_size) {
            const size_t end = std::min(i + cfg.batch_size, order.size());
            std::vector<PatchSample> batch_items;
            batch_items.reserve(end - i);
            for (size_t j = i; j < end; ++j) {
                PatchSample s = train_set.samples[order[j]];
                augment(s.image, s.mask,
                        derive_seed(cfg.seed, (static_cast<uint64_t>(epoch) << 32) ^ order[j]),
                        cfg);
                batch_items.push_back(std::move(s));
            }
            std::vector<const PatchSample*> ptrs;
            for (const auto& s : batch_items) ptrs.push_back(&s);
            fill_batch(ptrs, x, labels);

            const Tensor& probs = model.forward(x, true);
            const double loss = segmentation_loss(cfg.loss, probs, labels.data(),
                                                  weights.empty() ? nullptr : weights.data(),
                                                  nc, dprobs);
            model.graph().zero_grad();
            model.graph().backward(dprobs);
            adam.step(params, lr_at(step, cfg));
            ++step;
            loss_sum += loss;
            ++batches;
        }

        EpochStats es;
        es.epoch = epoch;
        es.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        es.val_mean_iou = validation_mean_iou(model, val_set, cfg.batch_size);
        es.lr = lr_at(step, cfg);
        result.history.push_back(es);

        if (es.val_mean_iou > result.best_val_miou || result.best_epoch < 0) {
            result.best_val_miou = es.val_mean_iou;
            result.best_epoch = epoch;
            if (!run_dir.empty())
                save_checkpoint((fs::path(run_dir) / "best.ckpt").string(), model,
                                {step, epoch, es.val_mean_iou});
        }
        if (cfg.early_stop_miou > 0 && es.val_mean_iou >= cfg.early_stop_miou) break;
    }
    result.steps = step - start_step;

    if (!run_dir.empty()) {
        save_checkpoint((fs::path(run_dir) / "last.ckpt").string(), model,
                        {step, static_cast<int>(result.history.size()) - 1,
                         result.history.empty() ? 0.0 : result.history.back().val_mean_iou});
        std::ofstream hist((fs::path(run_dir) / "history.csv").string(), std::ios::trunc);
        hist << "epoch,train_loss,val_mean_iou,lr\n";
        char buf[128];
        for (const EpochStats& es : result.history) {
            std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", es.epoch, es.train_loss,
                          es.val_mean_iou, es.lr);
            hist << buf;
        }
    }
    return result;
}

}  // namespace mfe
