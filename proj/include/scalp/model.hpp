#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scalp/autodiff.hpp"
#include "scalp/tensor.hpp"

namespace scalp {

enum class ParamGroup { encoder, classifier, projector };
std::string_view group_name(ParamGroup group);

/// Plain conv encoder: each stage is a 3x3 stride-2 conv + relu, followed by one
/// triplet-attention block. Downsample factor is 2^stages.
struct EncoderConfig {
    std::vector<std::size_t> channels{8, 16, 32, 64};
    std::size_t attention_kernel = 7;
    std::size_t classifier_hidden = 64;
    std::size_t projector_hidden = 64;
    std::size_t projection_dim = 32;
    std::size_t num_classes = 8;

    std::size_t stages() const { return channels.size(); }
    std::size_t downsample() const { return std::size_t{1} << channels.size(); }
    std::size_t feature_dim() const { return channels.back(); }
    /// Throws std::invalid_argument on empty/zero dims or an even attention kernel.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct NamedTensor {
    std::string name;
    ParamGroup group = ParamGroup::encoder;
    Tensor value;
};

/// Declaration-order parameter list plus the positions of each role.
class ModelParams {
public:
    std::vector<NamedTensor> entries;

    std::size_t size() const { return entries.size(); }
    std::size_t scalar_count() const;
    const Tensor& operator[](std::size_t i) const { return entries[i].value; }
    Tensor& operator[](std::size_t i) { return entries[i].value; }
    std::size_t find(const std::string& name) const;

    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
};

/// Indices of each parameter inside ModelParams for a given config.
struct ParamLayout {
    explicit ParamLayout(const EncoderConfig& config) : stages(config.stages()) {}

    std::size_t stages;
    std::size_t conv_weight(std::size_t stage) const { return 2 * stage; }
    std::size_t conv_bias(std::size_t stage) const { return 2 * stage + 1; }
    /// Branch 0 pools over channels, 1 over rows, 2 over columns.
    std::size_t attention_weight(std::size_t branch) const { return 2 * stages + 2 * branch; }
    std::size_t attention_bias(std::size_t branch) const { return 2 * stages + 2 * branch + 1; }
    std::size_t classifier(std::size_t i) const { return 2 * stages + 6 + i; }  // fc1.w fc1.b fc2.w fc2.b
    std::size_t projector(std::size_t i) const { return 2 * stages + 10 + i; }
    std::size_t count() const { return 2 * stages + 14; }
};

struct Model {
    EncoderConfig config;
    ModelParams params;

    /// He initialization (N(0, 2/fan_in)) for every kernel, zero biases.
    static Model initialize(const EncoderConfig& config, std::uint64_t seed);
};

/// Parameters registered on one tape.
struct BoundParams {
    std::vector<Var> vars;
    const Var& operator[](std::size_t i) const { return vars[i]; }
};

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad = true);

/// Stacks max and mean over `axis` into a new leading axis of size 2.
Var zpool(const Var& x, std::size_t axis);

/// Three-branch attention over C x H x W; output has the input's shape.
Var triplet_attention(const Var& x, const std::array<Var, 3>& weights, const std::array<Var, 3>& biases);

struct Encoded {
    Var features;             ///< c' x h' x w' (attention output)
    std::vector<Var> layers;  ///< layer 1..S are stage outputs, layer S+1 the attention output
};

Encoded encode(Tape& tape, const Model& model, const BoundParams& params, const Tensor& image);
/// Global average pooling, C x H x W -> 1 x C.
Var global_average_pool(const Var& features);
/// Pre-sigmoid class scores, 1 x num_classes.
Var classifier_logits(const Model& model, const BoundParams& params, const Var& features);
Var classifier_forward(const Model& model, const BoundParams& params, const Var& features);
/// Unit-norm embedding, 1 x projection_dim.
Var projector_forward(const Model& model, const BoundParams& params, const Var& features);

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace scalp
