#include "mfe/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace mfe::kernels {

namespace {
constexpr int kRowTile = 4;      // C rows updated together in gemm
constexpr int kBlockK = 256;     // K-panel for the A^T*B form
}  // namespace

void gemm(const float* A, const float* B, float* C, int M, int K, int N) {
#pragma omp parallel for schedule(static)
    for (int mb = 0; mb < M; mb += kRowTile) {
        const int mr = std::min(kRowTile, M - mb);
        if (mr == kRowTile) {
            const float* __restrict a0 = A + static_cast<size_t>(mb + 0) * K;
            const float* __restrict a1 = A + static_cast<size_t>(mb + 1) * K;
            const float* __restrict a2 = A + static_cast<size_t>(mb + 2) * K;
            const float* __restrict a3 = A + static_cast<size_t>(mb + 3) * K;
            float* __restrict c0 = C + static_cast<size_t>(mb + 0) * N;
            float* __restrict c1 = C + static_cast<size_t>(mb + 1) * N;
            float* __restrict c2 = C + static_cast<size_t>(mb + 2) * N;
            float* __restrict c3 = C + static_cast<size_t>(mb + 3) * N;
            for (int k = 0; k < K; ++k) {
                const float* __restrict b = B + static_cast<size_t>(k) * N;
                const float v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
#pragma omp simd
                for (int j = 0; j < N; ++j) {
                    c0[j] += v0 * b[j];
                    c1[j] += v1 * b[j];
                    c2[j] += v2 * b[j];
                    c3[j] += v3 * b[j];
                }
            }
        } else {
            for (int m = mb; m < mb + mr; ++m) {
                const float* __restrict a = A + static_cast<size_t>(m) * K;
                float* __restrict c = C + static_cast<size_t>(m) * N;
                for (int k = 0; k < K; ++k) {
                    const float* __restrict b = B + static_cast<size_t>(k) * N;
                    const float v = a[k];
#pragma omp simd
                    for (int j = 0; j < N; ++j) c[j] += v * b[j];
                }
            }
        }
    }
}

void gemm_at_b(const float* A, const float* B, float* C, int K, int M, int N) {
    // serial K panels (cache residency), parallel rows inside a panel;
    // each C row accumulates k ascending, so the sum order is fixed
    for (int kb = 0; kb < K; kb += kBlockK) {
        const int ke = std::min(kb + kBlockK, K);
#pragma omp parallel for schedule(static)
        for (int m = 0; m < M; ++m) {
            float* __restrict c = C + static_cast<size_t>(m) * N;
            for (int k = kb; k < ke; ++k) {
                const float v = A[static_cast<size_t>(k) * M + m];
                const float* __restrict b = B + static_cast<size_t>(k) * N;
#pragma omp simd
                for (int j = 0; j < N; ++j) c[j] += v * b[j];
            }
        }
    }
}

void gemm_a_bt(const float* A, const float* B, float* C, int M, int K, int N) {
#pragma omp parallel for schedule(static) collapse(2)
    for (int m = 0; m < M; ++m) {
        for (int n = 0; n < N; ++n) {
            const float* __restrict a = A + static_cast<size_t>(m) * K;
            const float* __restrict b = B + static_cast<size_t>(n) * K;
            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            C[static_cast<size_t>(m) * N + n] += acc;
        }
    }
}

void im2col(const float* x, int h, int w, const ConvShape& s, float* col) {
    const int oh = conv_out_dim(h, s.kh, s.stride, s.pad);
    const int ow = conv_out_dim(w, s.kw, s.stride, s.pad);
    const size_t krow = static_cast<size_t>(s.kh) * s.kw * s.cin;
#pragma omp parallel for schedule(static)
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            float* dst = col + (static_cast<size_t>(oy) * ow + ox) * krow;
            for (int ky = 0; ky < s.kh; ++ky) {
                const int iy = oy * s.stride - s.pad + ky;
                for (int kx = 0; kx < s.kw; ++kx) {
                    const int ix = ox * s.stride - s.pad + kx;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        std::memcpy(dst, x + (static_cast<size_t>(iy) * w + ix) * s.cin,
                                    sizeof(float) * s.cin);
                    } else {
                        std::memset(dst, 0, sizeof(float) * s.cin);
                    }
                    dst += s.cin;
                }
            }
        }
    }
}

void col2im_add(const float* col, int h, int w, const ConvShape& s, float* dx) {
    const int oh = conv_out_dim(h, s.kh, s.stride, s.pad);
    const int ow = conv_out_dim(w, s.kw, s.stride, s.pad);
    const size_t krow = static_cast<size_t>(s.kh) * s.kw * s.cin;
#pragma omp parallel for schedule(static)
    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
            float* __restrict dst = dx + (static_cast<size_t>(iy) * w + ix) * s.cin;
            for (int ky = 0; ky < s.kh; ++ky) {
                const int oy_num = iy + s.pad - ky;
                if (oy_num < 0 || oy_num % s.stride != 0) continue;
                const int oy = oy_num / s.stride;
                if (oy >= oh) continue;
                for (int kx = 0; kx < s.kw; ++kx) {
                    const int ox_num = ix + s.pad - kx;
                    if (ox_num < 0 || ox_num % s.stride != 0) continue;
                    const int ox = ox_num / s.stride;
                    if (ox >= ow) continue;
                    const float* __restrict src =
                        col + (static_cast<size_t>(oy) * ow + ox) * krow +
                        (static_cast<size_t>(ky) * s.kw + kx) * s.cin;
#pragma omp simd
                    for (int c = 0; c < s.cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

void conv2d_forward(const Tensor& x, const float* W, const float* bias,
                    const ConvShape& s, Tensor& y, std::vector<float>& col_scratch) {
    const int oh = conv_out_dim(x.h(), s.kh, s.stride, s.pad);
    const int ow = conv_out_dim(x.w(), s.kw, s.stride, s.pad);
    y.resize(x.n(), oh, ow, s.cout);
    const size_t m = static_cast<size_t>(oh) * ow;
    const size_t krow = static_cast<size_t>(s.kh) * s.kw * s.cin;
    col_scratch.resize(m * krow);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x.data() + static_cast<size_t>(n) * x.h() * x.w() * x.c(),
               x.h(), x.w(), s, col_scratch.data());
        float* yn = y.data() + static_cast<size_t>(n) * m * s.cout;
        if (bias) {
#pragma omp parallel for schedule(static)
            for (size_t r = 0; r < m; ++r)
                std::memcpy(yn + r * s.cout, bias, sizeof(float) * s.cout);
        } else {
            std::memset(yn, 0, sizeof(float) * m * s.cout);
        }
        gemm(col_scratch.data(), W, yn, static_cast<int>(m),
             static_cast<int>(krow), s.cout);
    }
}

void conv2d_backward(const Tensor& x, const float* W, const ConvShape& s,
                     const Tensor& dy, Tensor* dx, float* dW, float* db,
                     std::vector<float>& scratch_a, std::vector<float>& scratch_b) {
    const int oh = dy.h(), ow = dy.w();
    const size_t m = static_cast<size_t>(oh) * ow;
    const size_t krow = static_cast<size_t>(s.kh) * s.kw * s.cin;
    scratch_a.resize(m * krow);  // im2col of x / dcol
    scratch_b.resize(m * krow);
    for (int n = 0; n < x.n(); ++n) {
        const float* xn = x.data() + static_cast<size_t>(n) * x.h() * x.w() * x.c();
        const float* dyn = dy.data() + static_cast<size_t>(n) * m * s.cout;
        im2col(xn, x.h(), x.w(), s, scratch_a.data());
        gemm_at_b(scratch_a.data(), dyn, dW, static_cast<int>(m),
                  static_cast<int>(krow), s.cout);
        if (db) colsum_add(dyn, m, s.cout, db);
        if (dx) {
            std::memset(scratch_b.data(), 0, sizeof(float) * m * krow);
            gemm_a_bt(dyn, W, scratch_b.data(), static_cast<int>(m), s.cout,
                      static_cast<int>(krow));
            col2im_add(scratch_b.data(), x.h(), x.w(), s,
                       dx->data() + static_cast<size_t>(n) * x.h() * x.w() * x.c());
        }
    }
}

void depthwise3x3_forward(const Tensor& x, const float* W, int stride, Tensor& y) {
    const int c = x.c();
    const int oh = conv_out_dim(x.h(), 3, stride, 1);
    const int ow = conv_out_dim(x.w(), 3, stride, 1);
    y.resize(x.n(), oh, ow, c);
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < x.n(); ++n) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float* __restrict out = y.px(n, oy, ox);
                std::memset(out, 0, sizeof(float) * c);
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = oy * stride - 1 + ky;
                    if (iy < 0 || iy >= x.h()) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ox * stride - 1 + kx;
                        if (ix < 0 || ix >= x.w()) continue;
                        const float* __restrict in = x.px(n, iy, ix);
                        const float* __restrict wk = W + (ky * 3 + kx) * c;
#pragma omp simd
                        for (int j = 0; j < c; ++j) out[j] += in[j] * wk[j];
                    }
                }
            }
        }
    }
}

void depthwise3x3_backward(const Tensor& x, const float* W, int stride,
                           const Tensor& dy, Tensor* dx, float* dW) {
    const int c = x.c();
    const int oh = dy.h(), ow = dy.w();
    if (dx) {
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < x.n(); ++n) {
            for (int iy = 0; iy < x.h(); ++iy) {
                for (int ix = 0; ix < x.w(); ++ix) {
                    float* __restrict out = dx->px(n, iy, ix);
                    for (int ky = 0; ky < 3; ++ky) {
                        const int oy_num = iy + 1 - ky;
                        if (oy_num < 0 || oy_num % stride != 0) continue;
                        const int oy = oy_num / stride;
                        if (oy >= oh) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ox_num = ix + 1 - kx;
                            if (ox_num < 0 || ox_num % stride != 0) continue;
                            const int ox = ox_num / stride;
                            if (ox >= ow) continue;
                            const float* __restrict g = dy.px(n, oy, ox);
                            const float* __restrict wk = W + (ky * 3 + kx) * c;
#pragma omp simd
                            for (int j = 0; j < c; ++j) out[j] += g[j] * wk[j];
                        }
                    }
                }
            }
        }
    }
    // dW: one owner per (tap, channel-block); serial spatial sums inside
    constexpr int kCB = 16;
    const int cblocks = (c + kCB - 1) / kCB;
#pragma omp parallel for schedule(static) collapse(2)
    for (int tap = 0; tap < 9; ++tap) {
        for (int cb = 0; cb < cblocks; ++cb) {
            const int ky = tap / 3, kx = tap % 3;
            const int c0 = cb * kCB, c1 = std::min(c0 + kCB, c);
            for (int n = 0; n < x.n(); ++n) {
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - 1 + ky;
                    if (iy < 0 || iy >= x.h()) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - 1 + kx;
                        if (ix < 0 || ix >= x.w()) continue;
                        const float* __restrict in = x.px(n, iy, ix);
                        const float* __restrict g = dy.px(n, oy, ox);
                        float* __restrict wkd = dW + tap * c;
                        for (int j = c0; j < c1; ++j) wkd[j] += in[j] * g[j];
                    }
                }
            }
        }
    }
}

void convtranspose2x2_forward(const Tensor& x, const float* W, const float* bias,
                              int cout, Tensor& y) {
    const int cin = x.c();
    y.resize(x.n(), x.h() * 2, x.w() * 2, cout);
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < x.n(); ++n) {
        for (int r = 0; r < 2 * x.h(); ++r) {
            const int iy = r / 2, ky = r % 2;
            for (int ox = 0; ox < 2 * x.w(); ++ox) {
                const int ix = ox / 2, kx = ox % 2;
                const float* __restrict in = x.px(n, iy, ix);
                const float* __restrict wt =
                    W + (static_cast<size_t>(ky * 2 + kx) * cin) * cout;
                float* __restrict out = y.px(n, r, ox);
                if (bias) std::memcpy(out, bias, sizeof(float) * cout);
                else std::memset(out, 0, sizeof(float) * cout);
                for (int ci = 0; ci < cin; ++ci) {
                    const float v = in[ci];
                    const float* __restrict wrow = wt + static_cast<size_t>(ci) * cout;
#pragma omp simd
                    for (int co = 0; co < cout; ++co) out[co] += v * wrow[co];
                }
            }
        }
    }
}

void convtranspose2x2_backward(const Tensor& x, const float* W, int cout,
                               const Tensor& dy, Tensor* dx, float* dW, float* db,
                               std::vector<float>& scratch) {
    const int cin = x.c();
    const size_t spatial = static_cast<size_t>(x.n()) * x.h() * x.w();
    if (dx) {
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < x.n(); ++n) {
            for (int iy = 0; iy < x.h(); ++iy) {
                for (int ix = 0; ix < x.w(); ++ix) {
                    float* __restrict out = dx->px(n, iy, ix);
                    for (int tap = 0; tap < 4; ++tap) {
                        const int ky = tap / 2, kx = tap % 2;
                        const float* __restrict g = dy.px(n, 2 * iy + ky, 2 * ix + kx);
                        const float* __restrict wt =
                            W + (static_cast<size_t>(tap) * cin) * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const float* __restrict wrow = wt + static_cast<size_t>(ci) * cout;
                            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                            for (int co = 0; co < cout; ++co) acc += g[co] * wrow[co];
                            out[ci] += acc;
                        }
                    }
                }
            }
        }
    }
    // dW per tap: gather the strided dy plane, then an A^T*B product
    scratch.resize(spatial * cout);
    for (int tap = 0; tap < 4; ++tap) {
        const int ky = tap / 2, kx = tap % 2;
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < x.n(); ++n) {
            for (int iy = 0; iy < x.h(); ++iy) {
                for (int ix = 0; ix < x.w(); ++ix) {
                    const size_t row = (static_cast<size_t>(n) * x.h() + iy) * x.w() + ix;
                    std::memcpy(scratch.data() + row * cout,
                                dy.px(n, 2 * iy + ky, 2 * ix + kx), sizeof(float) * cout);
                }
            }
        }
        gemm_at_b(x.data(), scratch.data(),
                  dW + (static_cast<size_t>(tap) * cin) * cout,
                  static_cast<int>(spatial), cin, cout);
    }
    if (db) colsum_add(dy.data(), static_cast<size_t>(dy.n()) * dy.h() * dy.w(), cout, db);
}

void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<uint8_t>& argmax) {
    const int oh = x.h() / 2, ow = x.w() / 2, c = x.c();
    y.resize(x.n(), oh, ow, c);
    argmax.assign(y.size(), 0);
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < x.n(); ++n) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const float* p00 = x.px(n, 2 * oy, 2 * ox);
                const float* p01 = x.px(n, 2 * oy, 2 * ox + 1);
                const float* p10 = x.px(n, 2 * oy + 1, 2 * ox);
                const float* p11 = x.px(n, 2 * oy + 1, 2 * ox + 1);
                float* out = y.px(n, oy, ox);
                uint8_t* am = argmax.data() +
                              ((static_cast<size_t>(n) * oh + oy) * ow + ox) * c;
                for (int j = 0; j < c; ++j) {
                    float best = p00[j];
                    uint8_t idx = 0;
                    if (p01[j] > best) { best = p01[j]; idx = 1; }
                    if (p10[j] > best) { best = p10[j]; idx = 2; }
                    if (p11[j] > best) { best = p11[j]; idx = 3; }
                    out[j] = best;
                    am[j] = idx;
                }
            }
        }
    }
}

void maxpool2x2_backward(const Tensor& dy, const std::vector<uint8_t>& argmax, Tensor& dx) {
    const int oh = dy.h(), ow = dy.w(), c = dy.c();
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < dy.n(); ++n) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const float* g = dy.px(n, oy, ox);
                const uint8_t* am = argmax.data() +
                                    ((static_cast<size_t>(n) * oh + oy) * ow + ox) * c;
                for (int j = 0; j < c; ++j) {
                    const int dy_off = am[j] >> 1, dx_off = am[j] & 1;
                    dx.at(n, 2 * oy + dy_off, 2 * ox + dx_off, j) += g[j];
                }
            }
        }
    }
}

void colsum_add(const float* data, size_t rows, int cols, float* out) {
    constexpr size_t kBlocks = 64;
    const size_t nb = rows < kBlocks ? (rows == 0 ? 1 : rows) : kBlocks;
    std::vector<float> partial(nb * cols, 0.0f);
#pragma omp parallel for schedule(static)
    for (size_t b = 0; b < nb; ++b) {
        const size_t r0 = rows * b / nb, r1 = rows * (b + 1) / nb;
        float* __restrict p = partial.data() + b * cols;
        for (size_t r = r0; r < r1; ++r) {
            const float* __restrict row = data + r * cols;
#pragma omp simd
            for (int j = 0; j < cols; ++j) p[j] += row[j];
        }
    }
    for (size_t b = 0; b < nb; ++b) {
        const float* p = partial.data() + b * cols;
        for (int j = 0; j < cols; ++j) out[j] += p[j];
    }
}

}  // namespace mfe::kernels
