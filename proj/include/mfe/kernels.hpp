#pragma once

#include <cstddef>
#include <vector>

#include "mfe/tensor.hpp"

namespace mfe::kernels {

// 2D convolution geometry. Square kernels, symmetric zero padding.
struct ConvShape {
    int kh = 3, kw = 3;
    int stride = 1;
    int pad = 1;
    int cin = 0, cout = 0;
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// All kernels below are OpenMP-parallel with deterministic output: every
// destination element is written by exactly one thread and accumulated in a
// fixed order, so results are bit-identical for any thread count.

// C[M,N] += A[M,K] * B[K,N], row-major
void gemm(const float* A, const float* B, float* C, int M, int K, int N);
// C[M,N] += A^T * B, with A stored [K,M], B stored [K,N]
void gemm_at_b(const float* A, const float* B, float* C, int K, int M, int N);
// C[M,N] += A[M,K] * B^T, with B stored [N,K]
void gemm_a_bt(const float* A, const float* B, float* C, int M, int K, int N);

// col buffer layout: [oh*ow, kh*kw*cin], one batch item at a time
void im2col(const float* x, int h, int w, const ConvShape& s, float* col);
// gather-form col2im: dx[h,w,cin] += sum of matching col entries
void col2im_add(const float* col, int h, int w, const ConvShape& s, float* dx);

// Batched conv via im2col + gemm. W is [kh*kw*cin, cout]; bias optional.
void conv2d_forward(const Tensor& x, const float* W, const float* bias,
                    const ConvShape& s, Tensor& y, std::vector<float>& col_scratch);
// Accumulates into dW/db; dx may be null (input layer). dx is accumulated.
void conv2d_backward(const Tensor& x, const float* W, const ConvShape& s,
                     const Tensor& dy, Tensor* dx, float* dW, float* db,
                     std::vector<float>& scratch_a, std::vector<float>& scratch_b);

// Depthwise 3x3 convolution, pad 1. W is [9, c].
void depthwise3x3_forward(const Tensor& x, const float* W, int stride, Tensor& y);
void depthwise3x3_backward(const Tensor& x, const float* W, int stride,
                           const Tensor& dy, Tensor* dx, float* dW);

// Transposed convolution, kernel 2, stride 2 (each output pixel has exactly
// one kernel tap). W is [4, cin, cout] flattened.
void convtranspose2x2_forward(const Tensor& x, const float* W, const float* bias,
                              int cout, Tensor& y);
void convtranspose2x2_backward(const Tensor& x, const float* W, int cout,
                               const Tensor& dy, Tensor* dx, float* dW, float* db,
                               std::vector<float>& scratch);

// 2x2 max pooling, stride 2. argmax holds the winning corner (0..3) per output.
void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<uint8_t>& argmax);
void maxpool2x2_backward(const Tensor& dy, const std::vector<uint8_t>& argmax, Tensor& dx);

// Deterministic block-wise sum of rows: out[c] += sum over rows of data[row*c + j].
// Fixed block partition, serial combine, so the result is thread-count independent.
void colsum_add(const float* data, size_t rows, int cols, float* out);

// Serial reference implementations. Same contracts, naive loops; used by the
// unit tests as an independent oracle and by the benchmark tool.
namespace serial {
void gemm(const float* A, const float* B, float* C, int M, int K, int N);
void conv2d_forward(const Tensor& x, const float* W, const float* bias,
                    const ConvShape& s, Tensor& y);
void conv2d_backward(const Tensor& x, const float* W, const ConvShape& s,
                     const Tensor& dy, Tensor* dx, float* dW, float* db);
void depthwise3x3_forward(const Tensor& x, const float* W, int stride, Tensor& y);
void convtranspose2x2_forward(const Tensor& x, const float* W, const float* bias,
                              int cout, Tensor& y);
void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<uint8_t>& argmax);
}  // namespace serial

}  // namespace mfe::kernels
