#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mfe/kernels.hpp"
#include "mfe/rng.hpp"
#include "mfe/tensor.hpp"

namespace mfe::nn {

struct ParamBlock {
    std::vector<float> w;
    std::vector<float> g;
    void init(size_t n) { w.assign(n, 0.0f); g.assign(n, 0.0f); }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0f); }
};

// Multi-input layer. backward() ACCUMULATES into the input gradients so a
// tensor consumed by several layers (skip connections) collects every
// contribution.
class Layer {
public:
    virtual ~Layer() = default;
    virtual void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) = 0;
    virtual void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                          const Tensor& dy, const std::vector<Tensor*>& dxs) = 0;
    virtual std::vector<ParamBlock*> params() { return {}; }
    // persistent non-trainable buffers (batch-norm running stats)
    virtual std::vector<std::vector<float>*> state() { return {}; }
    virtual std::string name() const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d(int cin, int cout, int k, int stride, int pad, bool bias, Rng& rng);
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::vector<ParamBlock*> params() override;
    std::string name() const override { return "conv2d"; }

private:
    kernels::ConvShape shape_;
    bool use_bias_;
    ParamBlock w_, b_;
    std::vector<float> scratch_a_, scratch_b_;
};

class DepthwiseConv3x3 final : public Layer {
public:
    DepthwiseConv3x3(int c, int stride, Rng& rng);
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::vector<ParamBlock*> params() override;
    std::string name() const override { return "dwconv3x3"; }

private:
    int c_, stride_;
    ParamBlock w_;
};

class ConvTranspose2x2 final : public Layer {
public:
    ConvTranspose2x2(int cin, int cout, Rng& rng);
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::vector<ParamBlock*> params() override;
    std::string name() const override { return "convT2x2"; }

private:
    int cin_, cout_;
    ParamBlock w_, b_;
    std::vector<float> scratch_;
};

class MaxPool2x2 final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "maxpool2x2"; }

private:
    std::vector<uint8_t> argmax_;
};

class BatchNorm final : public Layer {
public:
    explicit BatchNorm(int c, double momentum = 0.9, double eps = 1e-5);
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::vector<ParamBlock*> params() override;
    std::vector<std::vector<float>*> state() override;
    std::string name() const override { return "batchnorm"; }

private:
    int c_;
    double momentum_, eps_;
    ParamBlock gamma_, beta_;
    std::vector<float> running_mean_, running_var_;
    std::vector<float> mean_, invstd_;  // batch stats cached for backward
};

class ReLU final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "relu"; }
};

class SiLU final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "silu"; }
};

class Sigmoid final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "sigmoid"; }
};

// channel-wise softmax per pixel
class Softmax final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "softmax"; }
};

class Concat final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "concat"; }
};

class Add final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "add"; }
};

class Flatten final : public Layer {
public:
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::string name() const override { return "flatten"; }
};

class Dense final : public Layer {
public:
    Dense(int in, int out, Rng& rng);
    void forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) override;
    void backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                  const Tensor& dy, const std::vector<Tensor*>& dxs) override;
    std::vector<ParamBlock*> params() override;
    std::string name() const override { return "dense"; }

private:
    int in_, out_;
    ParamBlock w_, b_;
};

// Static computation graph: nodes execute in insertion order, gradients flow
// in reverse. Node 0 is the input.
class Graph {
public:
    Graph() { nodes_.emplace_back(); }  // input slot

    int add(std::unique_ptr<Layer> layer, std::vector<int> inputs);
    int last() const { return static_cast<int>(nodes_.size()) - 1; }

    const Tensor& forward(const Tensor& x, bool train);
    // dy: gradient of the loss w.r.t. the last node's output
    void backward(const Tensor& dy);

    void zero_grad();
    std::vector<ParamBlock*> params();
    std::vector<std::vector<float>*> state();
    size_t parameter_count();
    const Tensor& output() const { return nodes_.back().out; }

private:
    struct Node {
        std::unique_ptr<Layer> layer;
        std::vector<int> in;
        Tensor out;
        Tensor grad;
    };
    std::vector<Node> nodes_;
};

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<ParamBlock*>& params, double lr);
    int64_t steps_done() const { return t_; }
    void set_steps_done(int64_t t) { t_ = t; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// Mean negative log-likelihood over pixels given softmax probabilities.
// labels are class ids, one per pixel, length n*h*w. Optional per-class
// weights; the loss is then weight-normalized. dprobs is overwritten.
double nll_loss(const Tensor& probs, const uint8_t* labels,
                const float* class_weights, int num_classes, Tensor& dprobs);

// Binary cross entropy on sigmoid probabilities (shape n,1,1,1).
double bce_loss(const Tensor& probs, const float* targets, Tensor& dprobs);

}  // namespace mfe::nn
