#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "mfe/nn.hpp"

namespace mfe {

enum class SegArch { unet, eunet };
enum class FinalAct { softmax, sigmoid };

struct SegModelConfig {
    SegArch arch = SegArch::unet;
    int num_classes = 3;
    int input_size = 256;   // nominal training size; models are fully convolutional
    int base_width = 16;    // unet first-level channels
    int depth_stages = 4;   // unet pooling levels; eunet fixes 5 resolution stages
    double width_mult = 1.0, depth_mult = 1.0, resolution_mult = 1.0;  // eunet scaling
    FinalAct final_activation = FinalAct::softmax;

    // effective nominal input after resolution scaling, rounded to 32
    int scaled_input_size() const;
    void validate() const;
};

std::string to_string(SegArch a);
SegArch seg_arch_from_string(const std::string& s);

// A built segmentation network: RGB batch (B,S,S,3) in [0,1] -> per-pixel
// class probabilities (B,S,S,num_classes) under softmax, or a single
// probability map under sigmoid.
class SegModel {
public:
    SegModel(const SegModelConfig& cfg, uint64_t init_seed);

    const SegModelConfig& config() const { return cfg_; }
    nn::Graph& graph() { return graph_; }
    size_t parameter_count() { return graph_.parameter_count(); }
    int out_channels() const;

    // batch spatial dims must be positive multiples of the model stride
    const Tensor& forward(const Tensor& batch, bool train = false) {
        const int stride = cfg_.arch == SegArch::eunet ? 32 : (1 << cfg_.depth_stages);
        if (batch.c() != 3 || batch.h() <= 0 || batch.h() % stride != 0 ||
            batch.w() % stride != 0)
            throw std::invalid_argument("seg forward: batch must be RGB with dims divisible by " +
                                        std::to_string(stride));
        return graph_.forward(batch, train);
    }

private:
    SegModelConfig cfg_;
    nn::Graph graph_;

    void build_unet(uint64_t seed);
    void build_eunet(uint64_t seed);
};

// validated constructors matching the two architectures
std::unique_ptr<SegModel> build_unet(const SegModelConfig& cfg, uint64_t seed = 0);
std::unique_ptr<SegModel> build_eunet(const SegModelConfig& cfg, uint64_t seed = 0);
std::unique_ptr<SegModel> build_seg_model(const SegModelConfig& cfg, uint64_t seed = 0);

// Checkpoints bundle the config with all parameters and batch-norm state.
// Loading into an existing model validates config compatibility.
struct CheckpointMeta {
    int64_t step = 0;
    int epoch = 0;
    double best_metric = 0.0;
};
void save_checkpoint(const std::string& path, SegModel& model, const CheckpointMeta& meta);
std::unique_ptr<SegModel> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);
void load_checkpoint_into(const std::string& path, SegModel& model, CheckpointMeta* meta = nullptr);

// shared low-level blob format (also used by the classifier checkpoints)
namespace detail {
void write_param_blob(std::ostream& os, nn::Graph& g);
void read_param_blob(std::istream& is, nn::Graph& g, const std::string& path);
}  // namespace detail

}  // namespace mfe
