#pragma once

// Dense compute kernels behind the tape primitives.
//
// `reference::` holds the direct serial loops. The unqualified kernels are the
// OpenMP versions used by the tape; each output element is owned by exactly one
// thread and accumulated in the same order as the reference, so both produce
// bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace scalp::kernels {

struct Conv2dGeometry {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
    std::size_t input_size() const { return channels * height * width; }
    std::size_t weight_size() const { return out_channels * channels * kernel_h * kernel_w; }
    std::size_t output_size() const { return out_channels * out_height() * out_width(); }
    std::size_t macs() const { return output_size() * channels * kernel_h * kernel_w; }
};

// Below this many multiply-adds the parallel region costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

namespace reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);

// Accumulates into the gradient buffers; empty spans are skipped.
void conv2d_backward(const Conv2dGeometry& g, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias);

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> out);

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
                     std::span<const double> b, std::span<const double> grad_out,
                     std::span<double> grad_a, std::span<double> grad_b);

}  // namespace reference

/// Forward convolution. `T` is the activation scalar (double, or a Taylor jet
/// for higher-order CAM derivatives); weights are always plain doubles.
template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<T> output) {
    const std::size_t oh = g.out_height();
    const std::size_t ow = g.out_width();
    const long long planes = static_cast<long long>(g.out_channels * oh);
    const long pad = static_cast<long>(g.padding);
    const long height = static_cast<long>(g.height);
    const long width = static_cast<long>(g.width);
#pragma omp parallel for schedule(static) if (g.macs() >= kParallelThreshold)
    for (long long row = 0; row < planes; ++row) {
        const std::size_t o = static_cast<std::size_t>(row) / oh;
        const std::size_t oy = static_cast<std::size_t>(row) % oh;
        for (std::size_t ox = 0; ox < ow; ++ox) {
            T acc = T(bias.empty() ? 0.0 : bias[o]);
            for (std::size_t c = 0; c < g.channels; ++c) {
                const double* w = weight.data() + (o * g.channels + c) * g.kernel_h * g.kernel_w;
                const T* plane = input.data() + c * g.height * g.width;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                    if (iy < 0 || iy >= height) continue;
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                        if (ix < 0 || ix >= width) continue;
                        acc += plane[iy * width + ix] * w[ky * g.kernel_w + kx];
                    }
                }
            }
            output[(o * oh + oy) * ow + ox] = acc;
        }
    }
}

void conv2d_backward(const Conv2dGeometry& g, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias);

/// out (m x n) = a (m x k) * b (k x n), overwriting `out`.
template <class T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
            std::span<const double> b, std::span<T> out) {
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0.0);
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            out[i * n + j] = acc;
        }
    }
}

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
                     std::span<const double> b, std::span<const double> grad_out,
                     std::span<double> grad_a, std::span<double> grad_b);

}  // namespace scalp::kernels
