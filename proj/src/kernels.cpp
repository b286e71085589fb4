#include "scalp/kernels.hpp"

namespace scalp::kernels {

namespace reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
    const std::size_t oh = g.out_height();
    const std::size_t ow = g.out_width();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (std::size_t c = 0; c < g.channels; ++c) {
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                                ix >= static_cast<long>(g.width)) {
                                continue;
                            }
                            acc += input[(c * g.height + iy) * g.width + ix] *
                                   weight[((o * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
                }
                output[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

void conv2d_backward(const Conv2dGeometry& g, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    const std::size_t oh = g.out_height();
    const std::size_t ow = g.out_width();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        if (!grad_bias.empty()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < oh * ow; ++i) acc += grad_output[o * oh * ow + i];
            grad_bias[o] += acc;
        }
        for (std::size_t c = 0; c < g.channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                    const std::size_t widx = ((o * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx;
                    double acc_w = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                                ix >= static_cast<long>(g.width)) {
                                continue;
                            }
                            const double go = grad_output[(o * oh + oy) * ow + ox];
                            acc_w += go * input[(c * g.height + iy) * g.width + ix];
                        }
                    }
                    if (!grad_weight.empty()) grad_weight[widx] += acc_w;
                }
            }
        }
    }
    if (grad_input.empty()) return;
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double go = grad_output[(o * oh + oy) * ow + ox];
                for (std::size_t c = 0; c < g.channels; ++c) {
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                                ix >= static_cast<long>(g.width)) {
                                continue;
                            }
                            grad_input[(c * g.height + iy) * g.width + ix] +=
                                go * weight[((o * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
                }
            }
        }
    }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> out) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            out[i * n + j] = acc;
        }
    }
}

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
                     std::span<const double> b, std::span<const double> grad_out,
                     std::span<double> grad_a, std::span<double> grad_b) {
    if (!grad_a.empty()) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grad_out[i * n + j] * b[p * n + j];
                grad_a[i * k + p] += acc;
            }
        }
    }
    if (!grad_b.empty()) {
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * grad_out[i * n + j];
                grad_b[p * n + j] += acc;
            }
        }
    }
}

}  // namespace reference

void conv2d_backward(const Conv2dGeometry& g, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
    const std::size_t oh = g.out_height();
    const std::size_t ow = g.out_width();
    const std::size_t ksize = g.kernel_h * g.kernel_w;
    const long pad = static_cast<long>(g.padding);
    const long height = static_cast<long>(g.height);
    const long width = static_cast<long>(g.width);
    const bool parallel = g.macs() >= kParallelThreshold;

    // Weight and bias gradients: one output channel per iteration.
#pragma omp parallel for schedule(static) if (parallel)
    for (long long oi = 0; oi < static_cast<long long>(g.out_channels); ++oi) {
        const std::size_t o = static_cast<std::size_t>(oi);
        const double* go = grad_output.data() + o * oh * ow;
        if (!grad_bias.empty()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
            grad_bias[o] += acc;
        }
        if (grad_weight.empty()) continue;
        for (std::size_t c = 0; c < g.channels; ++c) {
            const double* plane = input.data() + c * g.height * g.width;
            double* gw = grad_weight.data() + (o * g.channels + c) * ksize;
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                        if (iy < 0 || iy >= height) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                            if (ix < 0 || ix >= width) continue;
                            acc += go[oy * ow + ox] * plane[iy * width + ix];
                        }
                    }
                    gw[ky * g.kernel_w + kx] += acc;
                }
            }
        }
    }

    if (grad_input.empty()) return;
    // Input gradient: one input channel per iteration, scatter order (o, oy, ox, ky, kx).
#pragma omp parallel for schedule(static) if (parallel)
    for (long long ci = 0; ci < static_cast<long long>(g.channels); ++ci) {
        const std::size_t c = static_cast<std::size_t>(ci);
        double* gi = grad_input.data() + c * g.height * g.width;
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            const double* w = weight.data() + (o * g.channels + c) * ksize;
            const double* go = grad_output.data() + o * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double gval = go[oy * ow + ox];
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - pad;
                        if (iy < 0 || iy >= height) continue;
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
                            if (ix < 0 || ix >= width) continue;
                            gi[iy * width + ix] += gval * w[ky * g.kernel_w + kx];
                        }
                    }
                }
            }
        }
    }
}

void matmul_backward(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
                     std::span<const double> b, std::span<const double> grad_out,
                     std::span<double> grad_a, std::span<double> grad_b) {
    const bool parallel = m * k * n >= kParallelThreshold;
    if (!grad_a.empty()) {
#pragma omp parallel for schedule(static) if (parallel)
        for (long long i = 0; i < static_cast<long long>(m); ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grad_out[i * n + j] * b[p * n + j];
                grad_a[i * k + p] += acc;
            }
        }
    }
    if (!grad_b.empty()) {
#pragma omp parallel for schedule(static) if (parallel)
        for (long long p = 0; p < static_cast<long long>(k); ++p) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * grad_out[i * n + j];
                grad_b[p * n + j] += acc;
            }
        }
    }
}

}  // namespace scalp::kernels
