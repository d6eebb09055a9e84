#include <doctest.h>
#include <omp.h>

#include <array>
#include <cmath>
#include <vector>

#include "mfe/kernels.hpp"
#include "mfe/rng.hpp"

using namespace mfe;

namespace {

void fill_random(float* p, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) p[i] = rng.next_float() * 2.0f - 1.0f;
}

Tensor random_tensor(int n, int h, int w, int c, Rng& rng) {
    Tensor t(n, h, w, c);
    fill_random(t.data(), t.size(), rng);
    return t;
}

void check_close(const float* a, const float* b, size_t n, float tol = 2e-4f) {
    for (size_t i = 0; i < n; ++i) {
        const float scale = std::max(1.0f, std::max(std::abs(a[i]), std::abs(b[i])));
        REQUIRE(std::abs(a[i] - b[i]) <= tol * scale);
    }
}

}  // namespace

TEST_CASE("gemm matches the serial reference") {
    Rng rng(11);
    for (auto [m, k, n] : {std::array{37, 29, 17}, std::array{64, 288, 32}, std::array{3, 5, 100}}) {
        std::vector<float> a(static_cast<size_t>(m) * k), b(static_cast<size_t>(k) * n);
        fill_random(a.data(), a.size(), rng);
        fill_random(b.data(), b.size(), rng);
        std::vector<float> c1(static_cast<size_t>(m) * n, 0.5f), c2 = c1;
        kernels::serial::gemm(a.data(), b.data(), c1.data(), m, k, n);
        kernels::gemm(a.data(), b.data(), c2.data(), m, k, n);
        check_close(c1.data(), c2.data(), c1.size());
    }
}

TEST_CASE("gemm_at_b and gemm_a_bt match explicit transposes") {
    Rng rng(12);
    const int K = 133, M = 41, N = 23;
    std::vector<float> a(static_cast<size_t>(K) * M), b(static_cast<size_t>(K) * N);
    fill_random(a.data(), a.size(), rng);
    fill_random(b.data(), b.size(), rng);

    // A^T as an explicit matrix, then reference gemm
    std::vector<float> at(static_cast<size_t>(M) * K);
    for (int k = 0; k < K; ++k)
        for (int m = 0; m < M; ++m) at[static_cast<size_t>(m) * K + k] = a[static_cast<size_t>(k) * M + m];
    std::vector<float> c1(static_cast<size_t>(M) * N, 0.0f), c2 = c1;
    kernels::serial::gemm(at.data(), b.data(), c1.data(), M, K, N);
    kernels::gemm_at_b(a.data(), b.data(), c2.data(), K, M, N);
    check_close(c1.data(), c2.data(), c1.size());

    // B^T route
    std::vector<float> x(static_cast<size_t>(M) * K), bt(static_cast<size_t>(K) * N);
    fill_random(x.data(), x.size(), rng);
    std::vector<float> w(static_cast<size_t>(N) * K);
    fill_random(w.data(), w.size(), rng);
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) bt[static_cast<size_t>(k) * N + n] = w[static_cast<size_t>(n) * K + k];
    std::vector<float> d1(static_cast<size_t>(M) * N, 0.0f), d2 = d1;
    kernels::serial::gemm(x.data(), bt.data(), d1.data(), M, K, N);
    kernels::gemm_a_bt(x.data(), w.data(), d2.data(), M, K, N);
    check_close(d1.data(), d2.data(), d1.size());
}

TEST_CASE("conv2d forward matches the direct serial convolution") {
    Rng rng(13);
    struct Case { int h, w, cin, cout, k, stride, pad; };
    for (const Case e : {Case{16, 16, 3, 8, 3, 1, 1}, Case{20, 12, 4, 6, 3, 2, 1},
                         Case{9, 9, 5, 7, 1, 1, 0}, Case{32, 32, 8, 4, 3, 1, 1}}) {
        kernels::ConvShape s{e.k, e.k, e.stride, e.pad, e.cin, e.cout};
        Tensor x = random_tensor(2, e.h, e.w, e.cin, rng);
        std::vector<float> w(static_cast<size_t>(e.k) * e.k * e.cin * e.cout), bias(e.cout);
        fill_random(w.data(), w.size(), rng);
        fill_random(bias.data(), bias.size(), rng);
        Tensor y1, y2;
        std::vector<float> col;
        kernels::serial::conv2d_forward(x, w.data(), bias.data(), s, y1);
        kernels::conv2d_forward(x, w.data(), bias.data(), s, y2, col);
        REQUIRE(y1.same_shape(y2));
        check_close(y1.data(), y2.data(), y1.size());
    }
}

TEST_CASE("conv2d backward matches the serial scatter form") {
    Rng rng(14);
    for (int stride : {1, 2}) {
        kernels::ConvShape s{3, 3, stride, 1, 4, 6};
        Tensor x = random_tensor(2, 12, 14, s.cin, rng);
        std::vector<float> w(static_cast<size_t>(9) * s.cin * s.cout);
        fill_random(w.data(), w.size(), rng);
        Tensor y;
        std::vector<float> col;
        kernels::conv2d_forward(x, w.data(), nullptr, s, y, col);
        Tensor dy = random_tensor(y.n(), y.h(), y.w(), y.c(), rng);

        Tensor dx1(x.n(), x.h(), x.w(), x.c()), dx2 = dx1;
        std::vector<float> dw1(w.size(), 0.0f), dw2 = dw1, db1(s.cout, 0.0f), db2 = db1;
        kernels::serial::conv2d_backward(x, w.data(), s, dy, &dx1, dw1.data(), db1.data());
        std::vector<float> sa, sb;
        kernels::conv2d_backward(x, w.data(), s, dy, &dx2, dw2.data(), db2.data(), sa, sb);
        check_close(dx1.data(), dx2.data(), dx1.size(), 5e-4f);
        check_close(dw1.data(), dw2.data(), dw1.size(), 5e-4f);
        check_close(db1.data(), db2.data(), db1.size(), 5e-4f);
    }
}

TEST_CASE("depthwise and transposed conv match their references") {
    Rng rng(15);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor(2, 14, 10, 12, rng);
        std::vector<float> w(9 * 12);
        fill_random(w.data(), w.size(), rng);
        Tensor y1, y2;
        kernels::serial::depthwise3x3_forward(x, w.data(), stride, y1);
        kernels::depthwise3x3_forward(x, w.data(), stride, y2);
        REQUIRE(y1.same_shape(y2));
        check_close(y1.data(), y2.data(), y1.size());
    }
    {
        Tensor x = random_tensor(2, 7, 9, 10, rng);
        std::vector<float> w(static_cast<size_t>(4) * 10 * 6), bias(6);
        fill_random(w.data(), w.size(), rng);
        fill_random(bias.data(), bias.size(), rng);
        Tensor y1, y2;
        kernels::serial::convtranspose2x2_forward(x, w.data(), bias.data(), 6, y1);
        kernels::convtranspose2x2_forward(x, w.data(), bias.data(), 6, y2);
        REQUIRE(y1.same_shape(y2));
        check_close(y1.data(), y2.data(), y1.size());
    }
}

TEST_CASE("maxpool matches reference and scatters gradients to the argmax") {
    Rng rng(16);
    Tensor x = random_tensor(2, 8, 6, 5, rng);
    Tensor y1, y2;
    std::vector<uint8_t> am1, am2;
    kernels::serial::maxpool2x2_forward(x, y1, am1);
    kernels::maxpool2x2_forward(x, y2, am2);
    check_close(y1.data(), y2.data(), y1.size());
    REQUIRE(am1 == am2);

    Tensor dy = random_tensor(y1.n(), y1.h(), y1.w(), y1.c(), rng);
    Tensor dx(x.n(), x.h(), x.w(), x.c());
    kernels::maxpool2x2_backward(dy, am2, dx);
    // every gradient value lands exactly once
    double sum_dy = 0, sum_dx = 0;
    for (size_t i = 0; i < dy.size(); ++i) sum_dy += dy.data()[i];
    for (size_t i = 0; i < dx.size(); ++i) sum_dx += dx.data()[i];
    REQUIRE(sum_dx == doctest::Approx(sum_dy).epsilon(1e-6));
}

TEST_CASE("kernels are bit-deterministic across thread counts") {
    Rng rng(17);
    const int M = 97, K = 160, N = 48;
    std::vector<float> a(static_cast<size_t>(M) * K), b(static_cast<size_t>(K) * N);
    fill_random(a.data(), a.size(), rng);
    fill_random(b.data(), b.size(), rng);

    const int saved = omp_get_max_threads();
    std::vector<float> c1(static_cast<size_t>(M) * N, 0.0f), c2 = c1, s1(N, 0.0f), s2(N, 0.0f);
    omp_set_num_threads(1);
    kernels::gemm(a.data(), b.data(), c1.data(), M, K, N);
    kernels::colsum_add(b.data(), K, N, s1.data());
    omp_set_num_threads(std::max(2, saved));
    kernels::gemm(a.data(), b.data(), c2.data(), M, K, N);
    kernels::colsum_add(b.data(), K, N, s2.data());
    omp_set_num_threads(saved);

    REQUIRE(std::equal(c1.begin(), c1.end(), c2.begin()));
    REQUIRE(std::equal(s1.begin(), s1.end(), s2.begin()));
}
