// Benchmark of the OpenMP kernels against the serial reference.
// Usage: bench_kernels [size]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mfe/kernels.hpp"
#include "mfe/rng.hpp"

using namespace mfe;
using Clock = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void fill_random(float* p, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) p[i] = rng.next_float() - 0.5f;
}

void row(const char* name, double flops, double t_serial, double t_omp) {
    std::printf("%-22s %9.2f ms  %9.2f ms  %6.2fx   %7.2f GFLOP/s\n", name,
                t_serial * 1e3, t_omp * 1e3, t_serial / t_omp, flops / t_omp / 1e9);
}

}  // namespace

int main(int argc, char** argv) {
    const int size = argc > 1 ? std::atoi(argv[1]) : 128;
    std::printf("threads: %d, spatial size: %d\n", omp_get_max_threads(), size);
    std::printf("%-22s %12s %12s %8s %16s\n", "kernel", "serial", "openmp", "speedup", "");

    Rng rng(7);

    {  // gemm typical of a mid u-net layer
        const int M = size * size, K = 288, N = 64;
        std::vector<float> a(static_cast<size_t>(M) * K), b(static_cast<size_t>(K) * N),
            c(static_cast<size_t>(M) * N, 0.0f);
        fill_random(a.data(), a.size(), rng);
        fill_random(b.data(), b.size(), rng);
        const double flops = 2.0 * M * K * N;
        const double ts = time_of([&] {
            std::fill(c.begin(), c.end(), 0.0f);
            kernels::serial::gemm(a.data(), b.data(), c.data(), M, K, N);
        }, 2);
        const double tp = time_of([&] {
            std::fill(c.begin(), c.end(), 0.0f);
            kernels::gemm(a.data(), b.data(), c.data(), M, K, N);
        }, 4);
        row("gemm 288x64", flops, ts, tp);
    }

    {  // 3x3 convolution
        kernels::ConvShape s{3, 3, 1, 1, 32, 32};
        Tensor x(1, size, size, s.cin), y;
        fill_random(x.data(), x.size(), rng);
        std::vector<float> w(static_cast<size_t>(9) * s.cin * s.cout), bias(s.cout, 0.1f);
        fill_random(w.data(), w.size(), rng);
        std::vector<float> col;
        const double flops = 2.0 * size * size * 9.0 * s.cin * s.cout;
        const double ts = time_of(
            [&] { kernels::serial::conv2d_forward(x, w.data(), bias.data(), s, y); }, 2);
        const double tp = time_of(
            [&] { kernels::conv2d_forward(x, w.data(), bias.data(), s, y, col); }, 4);
        row("conv3x3 32->32", flops, ts, tp);
    }

    {  // depthwise
        Tensor x(1, size, size, 64), y;
        fill_random(x.data(), x.size(), rng);
        std::vector<float> w(9 * 64);
        fill_random(w.data(), w.size(), rng);
        const double flops = 2.0 * size * size * 9.0 * 64;
        const double ts =
            time_of([&] { kernels::serial::depthwise3x3_forward(x, w.data(), 1, y); }, 4);
        const double tp = time_of([&] { kernels::depthwise3x3_forward(x, w.data(), 1, y); }, 8);
        row("depthwise3x3 c64", flops, ts, tp);
    }

    {  // transposed conv
        Tensor x(1, size / 2, size / 2, 64), y;
        fill_random(x.data(), x.size(), rng);
        std::vector<float> w(static_cast<size_t>(4) * 64 * 32), bias(32, 0.0f);
        fill_random(w.data(), w.size(), rng);
        const double flops = 2.0 * (size / 2) * (size / 2) * 4.0 * 64 * 32;
        const double ts = time_of(
            [&] { kernels::serial::convtranspose2x2_forward(x, w.data(), bias.data(), 32, y); },
            4);
        const double tp = time_of(
            [&] { kernels::convtranspose2x2_forward(x, w.data(), bias.data(), 32, y); }, 8);
        row("convT2x2 64->32", flops, ts, tp);
    }

    {  // max pooling
        Tensor x(1, size, size, 64), y;
        fill_random(x.data(), x.size(), rng);
        std::vector<uint8_t> am;
        const double flops = static_cast<double>(size) * size * 64;
        const double ts = time_of([&] { kernels::serial::maxpool2x2_forward(x, y, am); }, 8);
        const double tp = time_of([&] { kernels::maxpool2x2_forward(x, y, am); }, 16);
        row("maxpool2x2 c64", flops, ts, tp);
    }
    return 0;
}
