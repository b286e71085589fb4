// Times the serial reference kernels against the OpenMP kernels on encoder-sized shapes.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "scalp/kernels.hpp"
#include "scalp/rng.hpp"

using namespace scalp;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto start = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count() / reps;
}

void bench_conv(const char* name, kernels::Conv2dGeometry g, int reps) {
    Rng rng(1);
    const auto x = random_vector(rng, g.input_size());
    const auto w = random_vector(rng, g.weight_size());
    const auto b = random_vector(rng, g.out_channels);
    const auto gy = random_vector(rng, g.output_size());
    std::vector<double> y(g.output_size()), gx(g.input_size()), gw(g.weight_size()), gb(g.out_channels);
    const double ref_f = time_ms([&] { kernels::reference::conv2d_forward(g, x, w, b, y); }, reps);
    const double par_f = time_ms([&] { kernels::conv2d_forward<double>(g, x, w, b, y); }, reps);
    const double ref_b = time_ms([&] { kernels::reference::conv2d_backward(g, x, w, gy, gx, gw, gb); }, reps);
    const double par_b = time_ms([&] { kernels::conv2d_backward(g, x, w, gy, gx, gw, gb); }, reps);
    std::printf("%-28s fwd %8.3f ms -> %8.3f ms (x%.2f)   bwd %8.3f ms -> %8.3f ms (x%.2f)\n", name, ref_f, par_f,
                ref_f / par_f, ref_b, par_b, ref_b / par_b);
}

void bench_matmul(const char* name, std::size_t m, std::size_t k, std::size_t n, int reps) {
    Rng rng(2);
    const auto a = random_vector(rng, m * k);
    const auto b = random_vector(rng, k * n);
    const auto go = random_vector(rng, m * n);
    std::vector<double> out(m * n), ga(m * k), gb(k * n);
    const double ref_f = time_ms([&] { kernels::reference::matmul(m, k, n, a, b, out); }, reps);
    const double par_f = time_ms([&] { kernels::matmul<double>(m, k, n, a, b, out); }, reps);
    const double ref_b = time_ms([&] { kernels::reference::matmul_backward(m, k, n, a, b, go, ga, gb); }, reps);
    const double par_b = time_ms([&] { kernels::matmul_backward(m, k, n, a, b, go, ga, gb); }, reps);
    std::printf("%-28s fwd %8.3f ms -> %8.3f ms (x%.2f)   bwd %8.3f ms -> %8.3f ms (x%.2f)\n", name, ref_f, par_f,
                ref_f / par_f, ref_b, par_b, ref_b / par_b);
}

}  // namespace

int main() {
    std::printf("threads: %d (reference -> OpenMP)\n", omp_get_max_threads());
    bench_conv("conv 1x64x64 -> 8, s2", {1, 64, 64, 8, 3, 3, 2, 1}, 50);
    bench_conv("conv 8x32x32 -> 16, s2", {8, 32, 32, 16, 3, 3, 2, 1}, 50);
    bench_conv("conv 16x16x16 -> 32, s2", {16, 16, 16, 32, 3, 3, 2, 1}, 50);
    bench_conv("conv 64x64x64 -> 64, s1", {64, 64, 64, 64, 3, 3, 1, 1}, 3);
    bench_conv("attention 2x8x8 -> 1, k7", {2, 8, 8, 1, 7, 7, 1, 3}, 200);
    bench_matmul("matmul 64x64x64", 64, 64, 64, 50);
    bench_matmul("matmul 256x256x256", 256, 256, 256, 3);
    return 0;
}
