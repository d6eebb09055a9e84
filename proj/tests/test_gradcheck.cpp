// Finite-difference checks of every layer's backward pass, plus end-to-end
// checks through the assembled networks. These are the independent oracle
// for the whole training stack.

#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "mfe/classifier.hpp"
#include "mfe/nn.hpp"
#include "mfe/seg_net.hpp"
#include "mfe/seg_train.hpp"

using namespace mfe;

namespace {

Tensor random_tensor(int n, int h, int w, int c, Rng& rng, float scale = 1.0f) {
    Tensor t(n, h, w, c);
    for (size_t i = 0; i < t.size(); ++i)
        t.data()[i] = (rng.next_float() * 2.0f - 1.0f) * scale;
    return t;
}

// scalar probe loss: L = sum(y * R) with fixed random R
struct Probe {
    std::vector<float> r;
    double loss(const Tensor& y) {
        if (r.size() != y.size()) {
            Rng rng(99);
            r.resize(y.size());
            for (auto& v : r) v = rng.next_float() * 2.0f - 1.0f;
        }
        double s = 0;
        for (size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data()[i]) * r[i];
        return s;
    }
    Tensor grad(const Tensor& y) {
        loss(y);  // ensure r sized
        Tensor g(y.n(), y.h(), y.w(), y.c());
        std::copy(r.begin(), r.end(), g.data());
        return g;
    }
};

constexpr double kH = 1e-3;
constexpr double kRelTol = 4e-2;
constexpr double kAbsTol = 4e-4;

void expect_close(double analytic, double numeric) {
    const double scale = std::max({1e-9, std::abs(analytic), std::abs(numeric)});
    const bool ok = std::abs(analytic - numeric) <= std::max(kAbsTol, kRelTol * scale);
    INFO("analytic=", analytic, " numeric=", numeric);
    REQUIRE(ok);
}

// checks d(probe loss)/d(param) and d/d(input) for a single-layer graph
void gradcheck_graph(nn::Graph& g, Tensor x, int n_param_probes = 24, bool train = true) {
    Probe probe;
    auto loss_at = [&] { return probe.loss(g.forward(x, train)); };
    loss_at();

    g.zero_grad();
    const Tensor& y = g.forward(x, train);
    g.backward(probe.grad(y));

    Rng pick(5);
    for (nn::ParamBlock* p : g.params()) {
        for (int probe_i = 0; probe_i < n_param_probes; ++probe_i) {
            const size_t idx = pick.next_below(p->w.size());
            const float saved = p->w[idx];
            p->w[idx] = saved + static_cast<float>(kH);
            const double lp = loss_at();
            p->w[idx] = saved - static_cast<float>(kH);
            const double lm = loss_at();
            p->w[idx] = saved;
            expect_close(p->g[idx], (lp - lm) / (2 * kH));
        }
    }
}

}  // namespace

TEST_CASE("conv2d gradients (weights and bias)") {
    Rng rng(21);
    nn::Graph g;
    g.add(std::make_unique<nn::Conv2d>(3, 5, 3, 1, 1, true, rng), {0});
    gradcheck_graph(g, random_tensor(2, 6, 6, 3, rng));
}

TEST_CASE("strided conv2d gradients") {
    Rng rng(22);
    nn::Graph g;
    g.add(std::make_unique<nn::Conv2d>(4, 6, 3, 2, 1, false, rng), {0});
    gradcheck_graph(g, random_tensor(2, 8, 8, 4, rng));
}

TEST_CASE("depthwise conv gradients") {
    Rng rng(23);
    nn::Graph g;
    g.add(std::make_unique<nn::DepthwiseConv3x3>(6, 1, rng), {0});
    gradcheck_graph(g, random_tensor(2, 6, 6, 6, rng));
}

TEST_CASE("transposed conv gradients") {
    Rng rng(24);
    nn::Graph g;
    g.add(std::make_unique<nn::ConvTranspose2x2>(5, 4, rng), {0});
    gradcheck_graph(g, random_tensor(2, 5, 5, 5, rng));
}

TEST_CASE("dense gradients") {
    Rng rng(25);
    nn::Graph g;
    g.add(std::make_unique<nn::Dense>(12, 7, rng), {0});
    gradcheck_graph(g, random_tensor(3, 1, 1, 12, rng));
}

TEST_CASE("batch norm gradients in train mode") {
    Rng rng(26);
    nn::Graph g;
    g.add(std::make_unique<nn::BatchNorm>(4), {0});
    gradcheck_graph(g, random_tensor(2, 5, 5, 4, rng), 8);
}

TEST_CASE("input gradients flow through a conv + relu + pool + dense chain") {
    Rng rng(27);
    nn::Graph g;
    int n = g.add(std::make_unique<nn::Conv2d>(2, 4, 3, 1, 1, true, rng), {0});
    n = g.add(std::make_unique<nn::ReLU>(), {n});
    n = g.add(std::make_unique<nn::MaxPool2x2>(), {n});
    n = g.add(std::make_unique<nn::Flatten>(), {n});
    g.add(std::make_unique<nn::Dense>(4 * 4 * 4, 3, rng), {n});
    gradcheck_graph(g, random_tensor(2, 8, 8, 2, rng));
}

TEST_CASE("skip-connection fan-out accumulates gradients correctly") {
    Rng rng(28);
    nn::Graph g;
    // node used twice: once pooled + upsampled, once via skip concat
    int a = g.add(std::make_unique<nn::Conv2d>(2, 3, 3, 1, 1, true, rng), {0});
    int p = g.add(std::make_unique<nn::MaxPool2x2>(), {a});
    int u = g.add(std::make_unique<nn::ConvTranspose2x2>(3, 3, rng), {p});
    int cat = g.add(std::make_unique<nn::Concat>(), {u, a});
    g.add(std::make_unique<nn::Conv2d>(6, 2, 3, 1, 1, true, rng), {cat});
    gradcheck_graph(g, random_tensor(1, 6, 6, 2, rng));
}

TEST_CASE("residual add gradients") {
    Rng rng(29);
    nn::Graph g;
    int a = g.add(std::make_unique<nn::Conv2d>(3, 3, 3, 1, 1, false, rng), {0});
    int b = g.add(std::make_unique<nn::Conv2d>(3, 3, 1, 1, 0, false, rng), {a});
    g.add(std::make_unique<nn::Add>(), {b, a});
    gradcheck_graph(g, random_tensor(2, 5, 5, 3, rng));
}

TEST_CASE("silu and sigmoid gradients") {
    Rng rng(30);
    {
        nn::Graph g;
        int n = g.add(std::make_unique<nn::Conv2d>(2, 3, 1, 1, 0, true, rng), {0});
        g.add(std::make_unique<nn::SiLU>(), {n});
        gradcheck_graph(g, random_tensor(2, 4, 4, 2, rng));
    }
    {
        nn::Graph g;
        int n = g.add(std::make_unique<nn::Dense>(6, 2, rng), {0});
        g.add(std::make_unique<nn::Sigmoid>(), {n});
        gradcheck_graph(g, random_tensor(3, 1, 1, 6, rng));
    }
}

namespace {

// End-to-end: finite differences of the actual training loss through a full
// model. Individual tiny gradients are noisy under float truncation, so the
// comparison aggregates |analytic - numeric| over the sampled indices of
// each block against the summed magnitudes; wiring bugs (lost or misrouted
// gradients) show up as aggregate errors near 1.
void gradcheck_model_loss(nn::Graph& g, const Tensor& x, const std::vector<uint8_t>& labels,
                          SegLoss loss_kind, int n_classes) {
    constexpr double h = 1e-3;
    Tensor dprobs;
    auto loss_at = [&] {
        const Tensor& probs = g.forward(x, true);
        Tensor d;
        return segmentation_loss(loss_kind, probs, labels.data(), nullptr, n_classes, d);
    };
    g.zero_grad();
    const Tensor& probs = g.forward(x, true);
    segmentation_loss(loss_kind, probs, labels.data(), nullptr, n_classes, dprobs);
    g.backward(dprobs);

    Rng pick(55);
    int block = 0;
    for (nn::ParamBlock* p : g.params()) {
        double abs_err = 0, magnitude = 0;
        for (int i = 0; i < 6; ++i) {
            const size_t idx = pick.next_below(p->w.size());
            const float saved = p->w[idx];
            p->w[idx] = saved + static_cast<float>(h);
            const double lp = loss_at();
            p->w[idx] = saved - static_cast<float>(h);
            const double lm = loss_at();
            p->w[idx] = saved;
            const double numeric = (lp - lm) / (2 * h);
            abs_err += std::abs(p->g[idx] - numeric);
            magnitude += std::abs(p->g[idx]) + std::abs(numeric);
        }
        if (magnitude > 5e-3) {
            INFO("param block ", block, " aggregate error ", abs_err / magnitude);
            REQUIRE(abs_err / magnitude < 0.1);
        }
        ++block;
    }
}

}  // namespace

TEST_CASE("tiny u-net end-to-end gradient check (cross entropy)") {
    SegModelConfig cfg;
    cfg.arch = SegArch::unet;
    cfg.base_width = 4;
    cfg.depth_stages = 2;
    cfg.input_size = 32;
    cfg.num_classes = 3;
    SegModel model(cfg, 7);
    Rng rng(31);
    Tensor x = random_tensor(2, 16, 16, 3, rng, 0.5f);
    std::vector<uint8_t> labels(2 * 16 * 16);
    for (auto& l : labels) l = static_cast<uint8_t>(rng.next_below(3));
    gradcheck_model_loss(model.graph(), x, labels, SegLoss::cross_entropy, 3);
}

TEST_CASE("tiny eu-net end-to-end gradient check (dice)") {
    SegModelConfig cfg;
    cfg.arch = SegArch::eunet;
    cfg.depth_stages = 5;
    cfg.input_size = 64;
    cfg.num_classes = 3;
    cfg.width_mult = 0.25;
    cfg.depth_mult = 0.2;
    SegModel model(cfg, 7);
    Rng rng(32);
    Tensor x = random_tensor(2, 64, 64, 3, rng, 0.5f);
    std::vector<uint8_t> labels(2 * 64 * 64);
    for (auto& l : labels) l = static_cast<uint8_t>(rng.next_below(3));
    gradcheck_model_loss(model.graph(), x, labels, SegLoss::dice, 3);
}

TEST_CASE("classifier end-to-end gradient check (bce and cosine)") {
    Rng rng(33);
    for (ClfLoss loss : {ClfLoss::bce, ClfLoss::cosine}) {
        ClfConfig cfg;
        cfg.loss = loss;
        cfg.input_size = 16;
        cfg.conv_channels = {4, 6, 8, 8};
        cfg.fc_hidden = 10;
        cfg.with_seg_map = false;
        ClfModel model(cfg, 3, 9);
        Tensor x = random_tensor(3, 16, 16, 3, rng, 0.5f);
        std::vector<int> labels{1, 0, 1};
        std::vector<float> targets{1.0f, 0.0f, 1.0f};

        Tensor dout;
        auto loss_at = [&] {
            const Tensor& out = model.forward(x, true);
            Tensor d;
            return loss == ClfLoss::bce ? nn::bce_loss(out, targets.data(), d)
                                        : cosine_loss_batch(out, labels, d);
        };
        model.graph().zero_grad();
        const Tensor& out = model.forward(x, true);
        if (loss == ClfLoss::bce) nn::bce_loss(out, targets.data(), dout);
        else cosine_loss_batch(out, labels, dout);
        model.graph().backward(dout);

        Rng pick(66);
        constexpr double h = 1e-3;
        for (nn::ParamBlock* p : model.graph().params()) {
            double abs_err = 0, magnitude = 0;
            for (int i = 0; i < 6; ++i) {
                const size_t idx = pick.next_below(p->w.size());
                const float saved = p->w[idx];
                p->w[idx] = saved + static_cast<float>(h);
                const double lp = loss_at();
                p->w[idx] = saved - static_cast<float>(h);
                const double lm = loss_at();
                p->w[idx] = saved;
                const double numeric = (lp - lm) / (2 * h);
                abs_err += std::abs(p->g[idx] - numeric);
                magnitude += std::abs(p->g[idx]) + std::abs(numeric);
            }
            if (magnitude > 5e-3) REQUIRE(abs_err / magnitude < 0.1);
        }
    }
}
