#include "mfe/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mfe::nn {

namespace {

void he_init(std::vector<float>& w, size_t fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = static_cast<float>(rng.next_normal() * std);
}

// Fixed-block column reduction over rows of a NHWC tensor viewed as
// [rows, c]; thread-count independent.
template <typename Fn>
void block_colreduce(size_t rows, int cols, float* out, Fn row_term) {
    constexpr size_t kBlocks = 64;
    const size_t nb = rows < kBlocks ? (rows == 0 ? 1 : rows) : kBlocks;
    std::vector<float> partial(nb * cols, 0.0f);
#pragma omp parallel for schedule(static)
    for (size_t b = 0; b < nb; ++b) {
        const size_t r0 = rows * b / nb, r1 = rows * (b + 1) / nb;
        float* p = partial.data() + b * cols;
        for (size_t r = r0; r < r1; ++r) row_term(r, p);
    }
    std::fill(out, out + cols, 0.0f);
    for (size_t b = 0; b < nb; ++b) {
        const float* p = partial.data() + b * cols;
        for (int j = 0; j < cols; ++j) out[j] += p[j];
    }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int cin, int cout, int k, int stride, int pad, bool bias, Rng& rng)
    : use_bias_(bias) {
    shape_ = {k, k, stride, pad, cin, cout};
    w_.init(static_cast<size_t>(k) * k * cin * cout);
    he_init(w_.w, static_cast<size_t>(k) * k * cin, rng);
    if (use_bias_) b_.init(cout);
}

void Conv2d::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    if (xs[0]->c() != shape_.cin)
        throw std::invalid_argument("conv2d: input has " + std::to_string(xs[0]->c()) +
                                    " channels, layer expects " + std::to_string(shape_.cin));
    kernels::conv2d_forward(*xs[0], w_.w.data(), use_bias_ ? b_.w.data() : nullptr,
                            shape_, y, scratch_a_);
}

void Conv2d::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                      const Tensor& dy, const std::vector<Tensor*>& dxs) {
    kernels::conv2d_backward(*xs[0], w_.w.data(), shape_, dy, dxs[0],
                             w_.g.data(), use_bias_ ? b_.g.data() : nullptr,
                             scratch_a_, scratch_b_);
}

std::vector<ParamBlock*> Conv2d::params() {
    if (use_bias_) return {&w_, &b_};
    return {&w_};
}

// ------------------------------------------------------- DepthwiseConv3x3

DepthwiseConv3x3::DepthwiseConv3x3(int c, int stride, Rng& rng)
    : c_(c), stride_(stride) {
    w_.init(static_cast<size_t>(9) * c);
    he_init(w_.w, 9, rng);
}

void DepthwiseConv3x3::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    if (xs[0]->c() != c_)
        throw std::invalid_argument("dwconv3x3: channel mismatch");
    kernels::depthwise3x3_forward(*xs[0], w_.w.data(), stride_, y);
}

void DepthwiseConv3x3::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                                const Tensor& dy, const std::vector<Tensor*>& dxs) {
    kernels::depthwise3x3_backward(*xs[0], w_.w.data(), stride_, dy, dxs[0], w_.g.data());
}

std::vector<ParamBlock*> DepthwiseConv3x3::params() { return {&w_}; }

// ------------------------------------------------------- ConvTranspose2x2

ConvTranspose2x2::ConvTranspose2x2(int cin, int cout, Rng& rng)
    : cin_(cin), cout_(cout) {
    w_.init(static_cast<size_t>(4) * cin * cout);
    he_init(w_.w, cin, rng);
    b_.init(cout);
}

void ConvTranspose2x2::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    if (xs[0]->c() != cin_)
        throw std::invalid_argument("convT2x2: channel mismatch");
    kernels::convtranspose2x2_forward(*xs[0], w_.w.data(), b_.w.data(), cout_, y);
}

void ConvTranspose2x2::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                                const Tensor& dy, const std::vector<Tensor*>& dxs) {
    kernels::convtranspose2x2_backward(*xs[0], w_.w.data(), cout_, dy, dxs[0],
                                       w_.g.data(), b_.g.data(), scratch_);
}

std::vector<ParamBlock*> ConvTranspose2x2::params() { return {&w_, &b_}; }

// ------------------------------------------------------------ MaxPool2x2

void MaxPool2x2::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    if (xs[0]->h() % 2 != 0 || xs[0]->w() % 2 != 0)
        throw std::invalid_argument("maxpool2x2 requires even spatial dims");
    kernels::maxpool2x2_forward(*xs[0], y, argmax_);
}

void MaxPool2x2::backward(const std::vector<const Tensor*>&, const Tensor&,
                          const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    kernels::maxpool2x2_backward(dy, argmax_, *dxs[0]);
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int c, double momentum, double eps)
    : c_(c), momentum_(momentum), eps_(eps) {
    gamma_.init(c);
    std::fill(gamma_.w.begin(), gamma_.w.end(), 1.0f);
    beta_.init(c);
    running_mean_.assign(c, 0.0f);
    running_var_.assign(c, 1.0f);
    mean_.assign(c, 0.0f);
    invstd_.assign(c, 0.0f);
}

void BatchNorm::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool train) {
    const Tensor& x = *xs[0];
    if (x.c() != c_) throw std::invalid_argument("batchnorm: channel mismatch");
    const size_t rows = static_cast<size_t>(x.n()) * x.h() * x.w();
    y.resize(x.n(), x.h(), x.w(), c_);
    if (train) {
        std::vector<float> sums(2 * c_, 0.0f);
        block_colreduce(rows, 2 * c_, sums.data(), [&](size_t r, float* p) {
            const float* row = x.data() + r * c_;
            for (int j = 0; j < c_; ++j) {
                p[j] += row[j];
                p[c_ + j] += row[j] * row[j];
            }
        });
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (int j = 0; j < c_; ++j) {
            const double m = sums[j] * inv_n;
            double var = sums[c_ + j] * inv_n - m * m;
            if (var < 0) var = 0;
            mean_[j] = static_cast<float>(m);
            invstd_[j] = static_cast<float>(1.0 / std::sqrt(var + eps_));
            running_mean_[j] = static_cast<float>(momentum_ * running_mean_[j] + (1 - momentum_) * m);
            running_var_[j] = static_cast<float>(momentum_ * running_var_[j] + (1 - momentum_) * var);
        }
    } else {
        for (int j = 0; j < c_; ++j) {
            mean_[j] = running_mean_[j];
            invstd_[j] = static_cast<float>(1.0 / std::sqrt(running_var_[j] + eps_));
        }
    }
    const float* g = gamma_.w.data();
    const float* b = beta_.w.data();
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* in = x.data() + r * c_;
        float* out = y.data() + r * c_;
#pragma omp simd
        for (int j = 0; j < c_; ++j)
            out[j] = (in[j] - mean_[j]) * invstd_[j] * g[j] + b[j];
    }
}

void BatchNorm::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                         const Tensor& dy, const std::vector<Tensor*>& dxs) {
    const Tensor& x = *xs[0];
    const size_t rows = static_cast<size_t>(x.n()) * x.h() * x.w();
    // accumulate dbeta = sum dy, dgamma = sum dy*xhat
    std::vector<float> sums(2 * c_, 0.0f);
    block_colreduce(rows, 2 * c_, sums.data(), [&](size_t r, float* p) {
        const float* in = x.data() + r * c_;
        const float* g = dy.data() + r * c_;
        for (int j = 0; j < c_; ++j) {
            const float xhat = (in[j] - mean_[j]) * invstd_[j];
            p[j] += g[j];
            p[c_ + j] += g[j] * xhat;
        }
    });
    for (int j = 0; j < c_; ++j) {
        beta_.g[j] += sums[j];
        gamma_.g[j] += sums[c_ + j];
    }
    Tensor* dx = dxs[0];
    if (!dx) return;
    const double inv_n = 1.0 / static_cast<double>(rows);
    std::vector<float> mean_dy(c_), mean_dy_xhat(c_), scale(c_);
    for (int j = 0; j < c_; ++j) {
        mean_dy[j] = static_cast<float>(sums[j] * inv_n);
        mean_dy_xhat[j] = static_cast<float>(sums[c_ + j] * inv_n);
        scale[j] = gamma_.w[j] * invstd_[j];
    }
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* in = x.data() + r * c_;
        const float* g = dy.data() + r * c_;
        float* out = dx->data() + r * c_;
#pragma omp simd
        for (int j = 0; j < c_; ++j) {
            const float xhat = (in[j] - mean_[j]) * invstd_[j];
            out[j] += scale[j] * (g[j] - mean_dy[j] - xhat * mean_dy_xhat[j]);
        }
    }
}

std::vector<ParamBlock*> BatchNorm::params() { return {&gamma_, &beta_}; }
std::vector<std::vector<float>*> BatchNorm::state() {
    return {&running_mean_, &running_var_};
}

// ----------------------------------------------------------- activations

void ReLU::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    y.resize(x.n(), x.h(), x.w(), x.c());
    const float* in = x.data();
    float* out = y.data();
    const size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

void ReLU::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                    const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    const float* in = xs[0]->data();
    const float* g = dy.data();
    float* out = dxs[0]->data();
    const size_t n = dy.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i)
        if (in[i] > 0.0f) out[i] += g[i];
}

void SiLU::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    y.resize(x.n(), x.h(), x.w(), x.c());
    const float* in = x.data();
    float* out = y.data();
    const size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-in[i]));
        out[i] = in[i] * s;
    }
}

void SiLU::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                    const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    const float* in = xs[0]->data();
    const float* g = dy.data();
    float* out = dxs[0]->data();
    const size_t n = dy.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-in[i]));
        out[i] += g[i] * s * (1.0f + in[i] * (1.0f - s));
    }
}

void Sigmoid::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    y.resize(x.n(), x.h(), x.w(), x.c());
    const float* in = x.data();
    float* out = y.data();
    const size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
}

void Sigmoid::backward(const std::vector<const Tensor*>&, const Tensor& y,
                       const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    const float* yv = y.data();
    const float* g = dy.data();
    float* out = dxs[0]->data();
    const size_t n = dy.size();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] += g[i] * yv[i] * (1.0f - yv[i]);
}

void Softmax::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    const int c = x.c();
    y.resize(x.n(), x.h(), x.w(), c);
    const size_t rows = x.size() / c;
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* in = x.data() + r * c;
        float* out = y.data() + r * c;
        float mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        float sum = 0.0f;
        for (int j = 0; j < c; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < c; ++j) out[j] *= inv;
    }
}

void Softmax::backward(const std::vector<const Tensor*>&, const Tensor& y,
                       const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    const int c = y.c();
    const size_t rows = y.size() / c;
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* p = y.data() + r * c;
        const float* g = dy.data() + r * c;
        float* out = dxs[0]->data() + r * c;
        float s = 0.0f;
        for (int j = 0; j < c; ++j) s += g[j] * p[j];
        for (int j = 0; j < c; ++j) out[j] += p[j] * (g[j] - s);
    }
}

// -------------------------------------------------------- shape plumbing

void Concat::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    int c_total = 0;
    for (const Tensor* x : xs) {
        if (x->h() != xs[0]->h() || x->w() != xs[0]->w() || x->n() != xs[0]->n())
            throw std::invalid_argument("concat: spatial shape mismatch");
        c_total += x->c();
    }
    const Tensor& x0 = *xs[0];
    y.resize(x0.n(), x0.h(), x0.w(), c_total);
    const size_t rows = static_cast<size_t>(x0.n()) * x0.h() * x0.w();
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        float* out = y.data() + r * c_total;
        for (const Tensor* x : xs) {
            std::memcpy(out, x->data() + r * x->c(), sizeof(float) * x->c());
            out += x->c();
        }
    }
}

void Concat::backward(const std::vector<const Tensor*>& xs, const Tensor& y,
                      const Tensor& dy, const std::vector<Tensor*>& dxs) {
    const int c_total = y.c();
    const size_t rows = dy.size() / c_total;
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const float* g = dy.data() + r * c_total;
        for (size_t i = 0; i < xs.size(); ++i) {
            const int ci = xs[i]->c();
            if (dxs[i]) {
                float* out = dxs[i]->data() + r * ci;
                for (int j = 0; j < ci; ++j) out[j] += g[j];
            }
            g += ci;
        }
    }
}

void Add::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& a = *xs[0];
    const Tensor& b = *xs[1];
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    y.resize(a.n(), a.h(), a.w(), a.c());
    const size_t n = a.size();
    const float* pa = a.data();
    const float* pb = b.data();
    float* out = y.data();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
}

void Add::backward(const std::vector<const Tensor*>&, const Tensor&,
                   const Tensor& dy, const std::vector<Tensor*>& dxs) {
    const size_t n = dy.size();
    const float* g = dy.data();
    for (Tensor* dx : dxs) {
        if (!dx) continue;
        float* out = dx->data();
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) out[i] += g[i];
    }
}

void Flatten::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    const int flat = x.h() * x.w() * x.c();
    y.resize(x.n(), 1, 1, flat);
    std::memcpy(y.data(), x.data(), sizeof(float) * x.size());
}

void Flatten::backward(const std::vector<const Tensor*>&, const Tensor&,
                       const Tensor& dy, const std::vector<Tensor*>& dxs) {
    if (!dxs[0]) return;
    const size_t n = dy.size();
    const float* g = dy.data();
    float* out = dxs[0]->data();
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] += g[i];
}

// ----------------------------------------------------------------- Dense

Dense::Dense(int in, int out, Rng& rng) : in_(in), out_(out) {
    w_.init(static_cast<size_t>(in) * out);
    he_init(w_.w, in, rng);
    b_.init(out);
}

void Dense::forward(const std::vector<const Tensor*>& xs, Tensor& y, bool) {
    const Tensor& x = *xs[0];
    if (x.h() != 1 || x.w() != 1 || x.c() != in_)
        throw std::invalid_argument("dense: input shape mismatch (want 1x1x" +
                                    std::to_string(in_) + ")");
    y.resize(x.n(), 1, 1, out_);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < x.n(); ++n)
        std::memcpy(y.data() + static_cast<size_t>(n) * out_, b_.w.data(),
                    sizeof(float) * out_);
    kernels::gemm(x.data(), w_.w.data(), y.data(), x.n(), in_, out_);
}

void Dense::backward(const std::vector<const Tensor*>& xs, const Tensor&,
                     const Tensor& dy, const std::vector<Tensor*>& dxs) {
    const Tensor& x = *xs[0];
    kernels::gemm_at_b(x.data(), dy.data(), w_.g.data(), x.n(), in_, out_);
    kernels::colsum_add(dy.data(), x.n(), out_, b_.g.data());
    if (dxs[0])
        kernels::gemm_a_bt(dy.data(), w_.w.data(), dxs[0]->data(), x.n(), out_, in_);
}

std::vector<ParamBlock*> Dense::params() { return {&w_, &b_}; }

// ----------------------------------------------------------------- Graph

int Graph::add(std::unique_ptr<Layer> layer, std::vector<int> inputs) {
    for (int i : inputs)
        if (i < 0 || i >= static_cast<int>(nodes_.size()))
            throw std::logic_error("graph: bad input node index");
    Node n;
    n.layer = std::move(layer);
    n.in = std::move(inputs);
    nodes_.push_back(std::move(n));
    return last();
}

const Tensor& Graph::forward(const Tensor& x, bool train) {
    nodes_[0].out = x;
    std::vector<const Tensor*> xs;
    for (size_t i = 1; i < nodes_.size(); ++i) {
        xs.clear();
        for (int j : nodes_[i].in) xs.push_back(&nodes_[j].out);
        nodes_[i].layer->forward(xs, nodes_[i].out, train);
    }
    return nodes_.back().out;
}

void Graph::backward(const Tensor& dy) {
    for (auto& n : nodes_) {
        n.grad.resize(n.out.n(), n.out.h(), n.out.w(), n.out.c());
        n.grad.zero();
    }
    nodes_.back().grad = dy;
    std::vector<const Tensor*> xs;
    std::vector<Tensor*> dxs;
    for (size_t i = nodes_.size() - 1; i >= 1; --i) {
        xs.clear();
        dxs.clear();
        for (int j : nodes_[i].in) {
            xs.push_back(&nodes_[j].out);
            dxs.push_back(j == 0 ? nullptr : &nodes_[j].grad);  // input grad unused
        }
        nodes_[i].layer->backward(xs, nodes_[i].out, nodes_[i].grad, dxs);
    }
}

void Graph::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

std::vector<ParamBlock*> Graph::params() {
    std::vector<ParamBlock*> out;
    for (auto& n : nodes_)
        if (n.layer)
            for (auto* p : n.layer->params()) out.push_back(p);
    return out;
}

std::vector<std::vector<float>*> Graph::state() {
    std::vector<std::vector<float>*> out;
    for (auto& n : nodes_)
        if (n.layer)
            for (auto* s : n.layer->state()) out.push_back(s);
    return out;
}

size_t Graph::parameter_count() {
    size_t total = 0;
    for (auto* p : params()) total += p->w.size();
    return total;
}

// ------------------------------------------------------------------ Adam

void Adam::step(const std::vector<ParamBlock*>& params, double lr) {
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->w.size(), 0.0f);
            v_.emplace_back(p->w.size(), 0.0f);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(eps_);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        float* w = params[pi]->w.data();
        const float* g = params[pi]->g.data();
        float* m = m_[pi].data();
        float* v = v_[pi].data();
        const size_t n = params[pi]->w.size();
#pragma omp parallel for schedule(static)
        for (size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
    }
}

// ----------------------------------------------------------------- losses

double nll_loss(const Tensor& probs, const uint8_t* labels,
                const float* class_weights, int num_classes, Tensor& dprobs) {
    const int c = probs.c();
    const size_t rows = probs.size() / c;
    dprobs.resize(probs.n(), probs.h(), probs.w(), c);
    dprobs.zero();
    constexpr float kEps = 1e-12f;
    constexpr size_t kBlocks = 64;
    const size_t nb = rows < kBlocks ? rows : kBlocks;
    std::vector<double> loss_part(nb, 0.0), wsum_part(nb, 0.0);
#pragma omp parallel for schedule(static)
    for (size_t b = 0; b < nb; ++b) {
        const size_t r0 = rows * b / nb, r1 = rows * (b + 1) / nb;
        double ls = 0.0, ws = 0.0;
        for (size_t r = r0; r < r1; ++r) {
            const int y = labels[r];
            const float wgt = class_weights ? class_weights[y] : 1.0f;
            const float p = std::max(probs.data()[r * c + y], kEps);
            ls += -static_cast<double>(wgt) * std::log(p);
            ws += wgt;
        }
        loss_part[b] = ls;
        wsum_part[b] = ws;
    }
    double loss = 0.0, wsum = 0.0;
    for (size_t b = 0; b < nb; ++b) {
        loss += loss_part[b];
        wsum += wsum_part[b];
    }
    if (wsum <= 0.0) wsum = 1.0;
    const float inv = static_cast<float>(1.0 / wsum);
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const int y = labels[r];
        const float wgt = class_weights ? class_weights[y] : 1.0f;
        const float p = std::max(probs.data()[r * c + y], kEps);
        dprobs.data()[r * c + y] = -wgt * inv / p;
    }
    (void)num_classes;
    return loss / wsum;
}

double bce_loss(const Tensor& probs, const float* targets, Tensor& dprobs) {
    const size_t n = probs.size();
    dprobs.resize(probs.n(), probs.h(), probs.w(), probs.c());
    constexpr float kEps = 1e-7f;
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const float q = std::min(std::max(probs.data()[i], kEps), 1.0f - kEps);
        const float t = targets[i];
        loss += -(t * std::log(q) + (1.0f - t) * std::log(1.0f - q));
        dprobs.data()[i] = (q - t) / (q * (1.0f - q)) / static_cast<float>(n);
    }
    return loss / static_cast<double>(n);
}

}  // namespace mfe::nn
