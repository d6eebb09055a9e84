#include "mfe/kernels.hpp"

#include <cstring>

// Naive single-threaded reference kernels. Kept deliberately simple: the
// unit tests compare the OpenMP implementations against these, and the
// benchmark tool reports the speedup.

namespace mfe::kernels::serial {

void gemm(const float* A, const float* B, float* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            const float v = A[static_cast<size_t>(m) * K + k];
            for (int j = 0; j < N; ++j)
                C[static_cast<size_t>(m) * N + j] += v * B[static_cast<size_t>(k) * N + j];
        }
}

void conv2d_forward(const Tensor& x, const float* W, const float* bias,
                    const ConvShape& s, Tensor& y) {
    const int oh = conv_out_dim(x.h(), s.kh, s.stride, s.pad);
    const int ow = conv_out_dim(x.w(), s.kw, s.stride, s.pad);
    y.resize(x.n(), oh, ow, s.cout);
    for (int n = 0; n < x.n(); ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int co = 0; co < s.cout; ++co) {
                    float acc = bias ? bias[co] : 0.0f;
                    for (int ky = 0; ky < s.kh; ++ky)
                        for (int kx = 0; kx < s.kw; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                            for (int ci = 0; ci < s.cin; ++ci)
                                acc += x.at(n, iy, ix, ci) *
                                       W[((static_cast<size_t>(ky) * s.kw + kx) * s.cin + ci) * s.cout + co];
                        }
                    y.at(n, oy, ox, co) = acc;
                }
}

void conv2d_backward(const Tensor& x, const float* W, const ConvShape& s,
                     const Tensor& dy, Tensor* dx, float* dW, float* db) {
    const int oh = dy.h(), ow = dy.w();
    for (int n = 0; n < x.n(); ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int co = 0; co < s.cout; ++co) {
                    const float g = dy.at(n, oy, ox, co);
                    if (db) db[co] += g;
                    for (int ky = 0; ky < s.kh; ++ky)
                        for (int kx = 0; kx < s.kw; ++kx) {
                            const int iy = oy * s.stride - s.pad + ky;
                            const int ix = ox * s.stride - s.pad + kx;
                            if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                            for (int ci = 0; ci < s.cin; ++ci) {
                                const size_t wi =
                                    ((static_cast<size_t>(ky) * s.kw + kx) * s.cin + ci) * s.cout + co;
                                dW[wi] += x.at(n, iy, ix, ci) * g;
                                if (dx) dx->at(n, iy, ix, ci) += W[wi] * g;
                            }
                        }
                }
}

void depthwise3x3_forward(const Tensor& x, const float* W, int stride, Tensor& y) {
    const int c = x.c();
    const int oh = conv_out_dim(x.h(), 3, stride, 1);
    const int ow = conv_out_dim(x.w(), 3, stride, 1);
    y.resize(x.n(), oh, ow, c);
    for (int n = 0; n < x.n(); ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int j = 0; j < c; ++j) {
                    float acc = 0.0f;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy * stride - 1 + ky;
                            const int ix = ox * stride - 1 + kx;
                            if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                            acc += x.at(n, iy, ix, j) * W[(ky * 3 + kx) * c + j];
                        }
                    y.at(n, oy, ox, j) = acc;
                }
}

void convtranspose2x2_forward(const Tensor& x, const float* W, const float* bias,
                              int cout, Tensor& y) {
    const int cin = x.c();
    y.resize(x.n(), x.h() * 2, x.w() * 2, cout);
    for (int n = 0; n < x.n(); ++n)
        for (int oy = 0; oy < 2 * x.h(); ++oy)
            for (int ox = 0; ox < 2 * x.w(); ++ox) {
                const int iy = oy / 2, ky = oy % 2;
                const int ix = ox / 2, kx = ox % 2;
                for (int co = 0; co < cout; ++co) {
                    float acc = bias ? bias[co] : 0.0f;
                    for (int ci = 0; ci < cin; ++ci)
                        acc += x.at(n, iy, ix, ci) *
                               W[(static_cast<size_t>(ky * 2 + kx) * cin + ci) * cout + co];
                    y.at(n, oy, ox, co) = acc;
                }
            }
}

void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<uint8_t>& argmax) {
    const int oh = x.h() / 2, ow = x.w() / 2, c = x.c();
    y.resize(x.n(), oh, ow, c);
    argmax.assign(y.size(), 0);
    for (int n = 0; n < x.n(); ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int j = 0; j < c; ++j) {
                    float best = x.at(n, 2 * oy, 2 * ox, j);
                    uint8_t idx = 0;
                    const float cands[3] = {x.at(n, 2 * oy, 2 * ox + 1, j),
                                            x.at(n, 2 * oy + 1, 2 * ox, j),
                                            x.at(n, 2 * oy + 1, 2 * ox + 1, j)};
                    for (uint8_t t = 0; t < 3; ++t)
                        if (cands[t] > best) { best = cands[t]; idx = static_cast<uint8_t>(t + 1); }
                    y.at(n, oy, ox, j) = best;
                    argmax[((static_cast<size_t>(n) * oh + oy) * ow + ox) * c + j] = idx;
                }
}

}  // namespace mfe::kernels::serial
