#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "scalp/box.hpp"
#include "scalp/model.hpp"
#include "scalp/tensor.hpp"

namespace scalp {

enum class CamMethod { gradcam, gradcampp };

std::string_view cam_name(CamMethod method);
/// Accepts "gradcam" and "gradcampp".
std::optional<CamMethod> parse_cam_method(std::string_view name);

/// Layers are numbered 1..S for the conv stages and S+1 for the attention
/// output. The default is the last conv stage.
std::size_t default_cam_layer(const EncoderConfig& config);
std::size_t cam_layer_count(const EncoderConfig& config);

struct ActivationGradients {
    Tensor activations;  ///< C x h x w
    Tensor gradients;    ///< dY/dA, Y the pre-sigmoid logit of the class
};

/// `disease` is 1-based. Throws std::out_of_range for a bad layer or class.
ActivationGradients activation_gradients(const Model& model, const Tensor& image, int disease, std::size_t layer);

struct ActivationDerivatives {
    Tensor activations;
    Tensor d1;  ///< dY/dA_i
    Tensor d2;  ///< d2Y/dA_i^2
    Tensor d3;  ///< d3Y/dA_i^3
};

/// Per-element first to third derivatives, each from a truncated Taylor
/// expansion of the network tail along that element's axis.
ActivationDerivatives activation_derivatives(const Model& model, const Tensor& image, int disease,
                                             std::size_t layer);

/// The logit of `disease` as a function of the activations at `layer`, and
/// its derivatives at arbitrary activations.
double tail_logit(const Model& model, std::size_t layer, const Tensor& activations, int disease);
ActivationGradients tail_gradients(const Model& model, std::size_t layer, const Tensor& activations, int disease);
ActivationDerivatives tail_derivatives(const Model& model, std::size_t layer, const Tensor& activations, int disease);

/// relu(sum_c w_c A_c) with w_c the spatial mean of dY/dA_c. Returns h x w.
Tensor gradcam(const Tensor& activations, const Tensor& gradients);

/// Second-order weighting: alpha = d2 / (2 d2 + sum(A_c) d3), zero when the
/// denominator is below 1e-12 in magnitude; w_c = sum alpha relu(d1).
Tensor gradcam_pp(const Tensor& activations, const Tensor& d1, const Tensor& d2, const Tensor& d3);

struct Heatmap {
    Tensor values;     ///< H x W
    ScaledMap scaled;  ///< round(255 (v - min) / (max - min)), zeros when constant
};

ScaledMap scale_to_bytes(const Tensor& values);

/// Bilinear upsampling of an h x w map to target x target, then byte scaling.
Heatmap upsample_and_scale(const Tensor& values, std::size_t target_side);

/// Full pipeline for one study and class at the image's resolution.
Heatmap compute_heatmap(const Model& model, const Tensor& image, int disease, CamMethod method,
                        std::optional<std::size_t> layer = std::nullopt);

/// Half image, half heatmap, as bytes.
ScaledMap overlay(const Tensor& image, const ScaledMap& heatmap);

}  // namespace scalp
