#include "scalp/cam.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalp/jet.hpp"
#include "scalp/kernels.hpp"

namespace scalp {

std::string_view cam_name(CamMethod method) {
    return method == CamMethod::gradcam ? "gradcam" : "gradcampp";
}

std::optional<CamMethod> parse_cam_method(std::string_view name) {
    if (name == "gradcam") return CamMethod::gradcam;
    if (name == "gradcampp") return CamMethod::gradcampp;
    return std::nullopt;
}

std::size_t default_cam_layer(const EncoderConfig& config) { return config.stages(); }
std::size_t cam_layer_count(const EncoderConfig& config) { return config.stages() + 1; }

namespace {

void check_target(const Model& model, int disease, std::size_t layer) {
    if (layer < 1 || layer > cam_layer_count(model.config)) {
        throw std::out_of_range("cam: layer " + std::to_string(layer) + " outside 1.." +
                                std::to_string(cam_layer_count(model.config)));
    }
    if (disease < 1 || disease > static_cast<int>(model.config.num_classes)) {
        throw std::out_of_range("cam: class " + std::to_string(disease) + " outside 1.." +
                                std::to_string(model.config.num_classes));
    }
}

// A C x H x W grid of activation scalars (double or Jet) for the tail replay.
template <class T>
struct Grid {
    std::size_t c = 0, h = 0, w = 0;
    std::vector<T> v;
};

template <class T>
Grid<T> conv(const Grid<T>& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
    kernels::Conv2dGeometry g;
    g.channels = x.c;
    g.height = x.h;
    g.width = x.w;
    g.out_channels = weight.dim(0);
    g.kernel_h = weight.dim(2);
    g.kernel_w = weight.dim(3);
    g.stride = stride;
    g.padding = pad;
    Grid<T> out{g.out_channels, g.out_height(), g.out_width(), std::vector<T>(g.output_size(), T(0.0))};
    kernels::conv2d_forward<T>(g, std::span<const T>(x.v), weight.data(), bias.data(), std::span<T>(out.v));
    return out;
}

template <class T>
void relu_inplace(std::vector<T>& v) {
    for (T& x : v) x = relu(x);
}

// Permutations used by the attention branches are all involutions on 3 axes.
template <class T>
Grid<T> permute(const Grid<T>& x, int branch) {
    if (branch == 0) return x;
    Grid<T> out;
    if (branch == 1) {  // (c, h, w) -> (h, c, w)
        out = {x.h, x.c, x.w, std::vector<T>(x.v.size(), T(0.0))};
        for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t i = 0; i < x.h; ++i)
                for (std::size_t j = 0; j < x.w; ++j) out.v[(i * x.c + c) * x.w + j] = x.v[(c * x.h + i) * x.w + j];
    } else {  // (c, h, w) -> (w, h, c)
        out = {x.w, x.h, x.c, std::vector<T>(x.v.size(), T(0.0))};
        for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t i = 0; i < x.h; ++i)
                for (std::size_t j = 0; j < x.w; ++j) out.v[(j * x.h + i) * x.c + c] = x.v[(c * x.h + i) * x.w + j];
    }
    return out;
}

template <class T>
Grid<T> zpool(const Grid<T>& x) {
    const std::size_t plane = x.h * x.w;
    Grid<T> out{2, x.h, x.w, std::vector<T>(2 * plane, T(0.0))};
    const double inv = 1.0 / static_cast<double>(x.c);
    for (std::size_t p = 0; p < plane; ++p) {
        T best = x.v[p];
        T acc = T(0.0);
        for (std::size_t c = 0; c < x.c; ++c) {
            const T& e = x.v[c * plane + p];
            if (e > best) best = e;
            acc += e;
        }
        out.v[p] = best;
        out.v[plane + p] = acc * inv;
    }
    return out;
}

template <class T>
T tail(const Model& model, std::size_t layer, Grid<T> x, int disease) {
    const ParamLayout layout(model.config);
    const ModelParams& p = model.params;
    using std::exp;
    for (std::size_t s = layer; s < layout.stages; ++s) {
        x = conv(x, p[layout.conv_weight(s)], p[layout.conv_bias(s)], 2, 1);
        relu_inplace(x.v);
    }
    if (layer <= layout.stages) {
        std::vector<T> total(x.v.size(), T(0.0));
        for (int b = 0; b < 3; ++b) {
            const Grid<T> rotated = permute(x, b);
            const Tensor& w = p[layout.attention_weight(b)];
            Grid<T> attn = conv(zpool(rotated), w, p[layout.attention_bias(b)], 1, w.dim(2) / 2);
            for (T& a : attn.v) a = sigmoid(a);
            Grid<T> gated = rotated;
            const std::size_t plane = rotated.h * rotated.w;
            for (std::size_t c = 0; c < rotated.c; ++c)
                for (std::size_t q = 0; q < plane; ++q) gated.v[c * plane + q] = rotated.v[c * plane + q] * attn.v[q];
            const Grid<T> back = permute(gated, b);
            for (std::size_t i = 0; i < total.size(); ++i) total[i] = b == 0 ? back.v[i] : total[i] + back.v[i];
        }
        for (std::size_t i = 0; i < total.size(); ++i) x.v[i] = total[i] * (1.0 / 3.0);
    }
    // Global average pool, rows then columns, as in the tape graph.
    std::vector<T> pooled(x.c, T(0.0));
    const double inv_w = 1.0 / static_cast<double>(x.w);
    const double inv_h = 1.0 / static_cast<double>(x.h);
    for (std::size_t c = 0; c < x.c; ++c) {
        T col_acc = T(0.0);
        for (std::size_t i = 0; i < x.h; ++i) {
            T row = T(0.0);
            for (std::size_t j = 0; j < x.w; ++j) row += x.v[(c * x.h + i) * x.w + j];
            col_acc += row * inv_w;
        }
        pooled[c] = col_acc * inv_h;
    }
    const Tensor& w1 = p[layout.classifier(0)];
    const Tensor& b1 = p[layout.classifier(1)];
    const Tensor& w2 = p[layout.classifier(2)];
    const Tensor& b2 = p[layout.classifier(3)];
    const std::size_t hidden = w1.dim(1);
    std::vector<T> h(hidden, T(0.0));
    kernels::matmul<T>(1, x.c, hidden, std::span<const T>(pooled), w1.data(), std::span<T>(h));
    for (std::size_t j = 0; j < hidden; ++j) h[j] = relu(h[j] + b1[j]);
    const std::size_t k = static_cast<std::size_t>(disease - 1);
    const std::size_t classes = w2.dim(1);
    T logit = T(0.0);
    for (std::size_t j = 0; j < hidden; ++j) logit += h[j] * w2[j * classes + k];
    return logit + b2[k];
}

Tensor layer_activations(const Model& model, const Tensor& image, std::size_t layer) {
    Tape tape;
    const BoundParams params = bind(tape, model.params, false);
    const Encoded enc = encode(tape, model, params, image);
    return enc.layers[layer - 1].value();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
    }
}

}  // namespace

ActivationGradients activation_gradients(const Model& model, const Tensor& image, int disease, std::size_t layer) {
    check_target(model, disease, layer);
    return tail_gradients(model, layer, layer_activations(model, image, layer), disease);
}

ActivationGradients tail_gradients(const Model& model, std::size_t layer, const Tensor& a, int disease) {
    check_target(model, disease, layer);
    if (a.rank() != 3) throw ShapeError("tail_gradients: expected C x h x w activations");
    // The tail is replayed from a leaf so the backward pass stops at the layer.
    Tape tape;
    const BoundParams params = bind(tape, model.params, false);
    const Var leaf = tape.leaf(a);
    Var x = leaf;
    const ParamLayout layout(model.config);
    for (std::size_t s = layer; s < layout.stages; ++s) {
        x = ops::relu(ops::conv2d(x, params[layout.conv_weight(s)], params[layout.conv_bias(s)], 2, 1));
    }
    if (layer <= layout.stages) {
        const std::array<Var, 3> w{params[layout.attention_weight(0)], params[layout.attention_weight(1)],
                                   params[layout.attention_weight(2)]};
        const std::array<Var, 3> b{params[layout.attention_bias(0)], params[layout.attention_bias(1)],
                                   params[layout.attention_bias(2)]};
        x = triplet_attention(x, w, b);
    }
    const Var y = ops::select(classifier_logits(model, params, x), static_cast<std::size_t>(disease - 1));
    const Gradients grads = tape.backward(y);
    return {a, grads.of(leaf)};
}

double tail_logit(const Model& model, std::size_t layer, const Tensor& activations, int disease) {
    check_target(model, disease, layer);
    if (activations.rank() != 3) throw ShapeError("tail_logit: expected C x h x w activations");
    Grid<double> x{activations.dim(0), activations.dim(1), activations.dim(2), std::vector<double>(activations.data().begin(), activations.data().end())};
    return tail<double>(model, layer, std::move(x), disease);
}

ActivationDerivatives activation_derivatives(const Model& model, const Tensor& image, int disease,
                                             std::size_t layer) {
    check_target(model, disease, layer);
    return tail_derivatives(model, layer, layer_activations(model, image, layer), disease);
}

ActivationDerivatives tail_derivatives(const Model& model, std::size_t layer, const Tensor& a, int disease) {
    check_target(model, disease, layer);
    if (a.rank() != 3) throw ShapeError("tail_derivatives: expected C x h x w activations");
    ActivationDerivatives out{a, Tensor(a.shape()), Tensor(a.shape()), Tensor(a.shape())};
    const long long n = static_cast<long long>(a.size());
    std::exception_ptr failure;
#pragma omp parallel
    {
        Grid<Jet> x{a.dim(0), a.dim(1), a.dim(2), std::vector<Jet>(a.size(), Jet(0.0))};
#pragma omp for schedule(dynamic, 16)
        for (long long e = 0; e < n; ++e) {
            try {
                for (std::size_t i = 0; i < a.size(); ++i) x.v[i] = Jet(a[i]);
                x.v[e] = Jet::variable(a[e]);
                const Jet y = tail<Jet>(model, layer, x, disease);
                out.d1[e] = y.d1();
                out.d2[e] = y.d2();
                out.d3[e] = y.d3();
            } catch (...) {
#pragma omp critical(scalp_cam_failure)
                if (!failure) failure = std::current_exception();
            }
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

Tensor gradcam(const Tensor& activations, const Tensor& gradients) {
    check_same_shape(activations, gradients, "gradcam");
    if (activations.rank() != 3) throw ShapeError("gradcam: expected C x h x w maps");
    const std::size_t channels = activations.dim(0);
    const std::size_t plane = activations.dim(1) * activations.dim(2);
    Tensor out(Shape{activations.dim(1), activations.dim(2)});
    for (std::size_t c = 0; c < channels; ++c) {
        double w = 0.0;
        for (std::size_t q = 0; q < plane; ++q) w += gradients[c * plane + q];
        w /= static_cast<double>(plane);
        for (std::size_t q = 0; q < plane; ++q) out[q] += w * activations[c * plane + q];
    }
    for (std::size_t q = 0; q < plane; ++q) out[q] = std::max(out[q], 0.0);
    return out;
}

Tensor gradcam_pp(const Tensor& activations, const Tensor& d1, const Tensor& d2, const Tensor& d3) {
    check_same_shape(activations, d1, "gradcam_pp");
    check_same_shape(activations, d2, "gradcam_pp");
    check_same_shape(activations, d3, "gradcam_pp");
    if (activations.rank() != 3) throw ShapeError("gradcam_pp: expected C x h x w maps");
    const std::size_t channels = activations.dim(0);
    const std::size_t plane = activations.dim(1) * activations.dim(2);
    Tensor out(Shape{activations.dim(1), activations.dim(2)});
    for (std::size_t c = 0; c < channels; ++c) {
        double map_sum = 0.0;
        for (std::size_t q = 0; q < plane; ++q) map_sum += activations[c * plane + q];
        double w = 0.0;
        for (std::size_t q = 0; q < plane; ++q) {
            const std::size_t i = c * plane + q;
            const double den = 2.0 * d2[i] + map_sum * d3[i];
            const double alpha = std::abs(den) < 1e-12 ? 0.0 : d2[i] / den;
            w += alpha * std::max(d1[i], 0.0);
        }
        for (std::size_t q = 0; q < plane; ++q) out[q] += w * activations[c * plane + q];
    }
    for (std::size_t q = 0; q < plane; ++q) out[q] = std::max(out[q], 0.0);
    return out;
}

ScaledMap scale_to_bytes(const Tensor& values) {
    if (values.rank() != 2) throw ShapeError("scale_to_bytes: expected an H x W map");
    ScaledMap out{values.dim(0), values.dim(1), std::vector<std::uint8_t>(values.size(), 0)};
    if (values.size() == 0) return out;
    const auto [lo, hi] = std::minmax_element(values.data().begin(), values.data().end());
    const double mn = *lo, mx = *hi;
    if (!(mx > mn)) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::round(255.0 * (values[i] - mn) / (mx - mn));
        out.values[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

Heatmap upsample_and_scale(const Tensor& values, std::size_t target_side) {
    if (values.rank() != 2) throw ShapeError("upsample_and_scale: expected an h x w map");
    if (target_side < values.dim(0) || target_side < values.dim(1)) {
        throw std::invalid_argument("upsample_and_scale: target side " + std::to_string(target_side) +
                                    " is smaller than the map");
    }
    Tape tape;
    const Var x = tape.constant(values.reshaped(Shape{1, values.dim(0), values.dim(1)}));
    const Tensor up = ops::upsample_bilinear(x, target_side, target_side).value().reshaped(Shape{target_side, target_side});
    Heatmap out{up, scale_to_bytes(up)};
    return out;
}

Heatmap compute_heatmap(const Model& model, const Tensor& image, int disease, CamMethod method,
                        std::optional<std::size_t> layer) {
    const std::size_t l = layer.value_or(default_cam_layer(model.config));
    Tensor values;
    if (method == CamMethod::gradcam) {
        const ActivationGradients ag = activation_gradients(model, image, disease, l);
        values = gradcam(ag.activations, ag.gradients);
    } else {
        const ActivationDerivatives ad = activation_derivatives(model, image, disease, l);
        values = gradcam_pp(ad.activations, ad.d1, ad.d2, ad.d3);
    }
    return upsample_and_scale(values, image.dim(0));
}

ScaledMap overlay(const Tensor& image, const ScaledMap& heatmap) {
    if (image.rank() != 2 || image.dim(0) != heatmap.rows || image.dim(1) != heatmap.cols) {
        throw ShapeError("overlay: image " + shape_string(image.shape()) + " does not match the heatmap");
    }
    ScaledMap out{heatmap.rows, heatmap.cols, std::vector<std::uint8_t>(heatmap.values.size(), 0)};
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double v = std::round(0.5 * 255.0 * std::clamp(image[i], 0.0, 1.0) + 0.5 * heatmap.values[i]);
        out.values[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return out;
}

}  // namespace scalp
