#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace mfe {

// Dense float tensor, NHWC row-major. Rank-2 data (dense layers) lives as
// (n, 1, 1, c).
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int h, int w, int c) { resize(n, h, w, c); }

    void resize(int n, int h, int w, int c) {
        n_ = n; h_ = h; w_ = w; c_ = c;
        data_.assign(static_cast<size_t>(n) * h * w * c, 0.0f);
    }

    void zero() { std::fill(data_.begin(), data_.end(), 0.0f); }

    int n() const { return n_; }
    int h() const { return h_; }
    int w() const { return w_; }
    int c() const { return c_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int n, int h, int w, int c) {
        return data_[((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_ + c];
    }
    float at(int n, int h, int w, int c) const {
        return data_[((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_ + c];
    }

    // pointer to the channel vector of one pixel
    float* px(int n, int h, int w) {
        return data_.data() + ((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_;
    }
    const float* px(int n, int h, int w) const {
        return data_.data() + ((static_cast<size_t>(n) * h_ + h) * w_ + w) * c_;
    }

private:
    int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
    std::vector<float> data_;
};

}  // namespace mfe
