#include "scalp/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "scalp/rng.hpp"

namespace scalp {

namespace {

// Intensities in [0,1] give He-initialized stages tiny activations; a pure gain keeps
// a black image mapping to zero features.
constexpr double kInputGain = 4.0;

}  // namespace

std::string_view group_name(ParamGroup group) {
    switch (group) {
        case ParamGroup::encoder: return "encoder";
        case ParamGroup::classifier: return "classifier";
        case ParamGroup::projector: return "projector";
    }
    return "unknown";
}

void EncoderConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("encoder: at least one stage is required");
    for (std::size_t c : channels) {
        if (c == 0) throw std::invalid_argument("encoder: channel counts must be positive");
    }
    if (attention_kernel == 0 || attention_kernel % 2 == 0) {
        throw std::invalid_argument("encoder: attention kernel must be a positive odd size");
    }
    if (classifier_hidden == 0 || projector_hidden == 0 || projection_dim == 0 || num_classes == 0) {
        throw std::invalid_argument("encoder: head dimensions must be positive");
    }
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
}

std::size_t ModelParams::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == name) return i;
    }
    throw std::out_of_range("model: no parameter named '" + name + "'");
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(scalar_count());
    for (const auto& e : entries) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
    return flat;
}

void ModelParams::assign(std::span<const double> flat) {
    if (flat.size() != scalar_count()) throw ShapeError("model: flat parameter vector has the wrong length");
    std::size_t offset = 0;
    for (auto& e : entries) {
        auto dst = e.value.data();
        std::copy(flat.begin() + offset, flat.begin() + offset + dst.size(), dst.begin());
        offset += dst.size();
    }
}

Model Model::initialize(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Model model;
    model.config = config;
    Rng rng(seed);
    auto he = [&](std::string name, ParamGroup group, Shape shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : t.data()) v = rng.normal(0.0, stddev);
        model.params.entries.push_back({std::move(name), group, std::move(t)});
    };
    auto zeros = [&](std::string name, ParamGroup group, Shape shape) {
        model.params.entries.push_back({std::move(name), group, Tensor(std::move(shape), 0.0)});
    };
    std::size_t in = 1;
    for (std::size_t s = 0; s < config.stages(); ++s) {
        const std::size_t out = config.channels[s];
        const std::string prefix = "encoder.conv" + std::to_string(s + 1);
        he(prefix + ".weight", ParamGroup::encoder, Shape{out, in, 3, 3}, in * 9);
        zeros(prefix + ".bias", ParamGroup::encoder, Shape{out});
        in = out;
    }
    const std::size_t k = config.attention_kernel;
    for (const char* branch : {"channel", "row", "column"}) {
        const std::string prefix = std::string("encoder.attention.") + branch;
        he(prefix + ".weight", ParamGroup::encoder, Shape{1, 2, k, k}, 2 * k * k);
        zeros(prefix + ".bias", ParamGroup::encoder, Shape{1});
    }
    const std::size_t c = config.feature_dim();
    he("classifier.fc1.weight", ParamGroup::classifier, Shape{c, config.classifier_hidden}, c);
    zeros("classifier.fc1.bias", ParamGroup::classifier, Shape{1, config.classifier_hidden});
    he("classifier.fc2.weight", ParamGroup::classifier, Shape{config.classifier_hidden, config.num_classes},
       config.classifier_hidden);
    zeros("classifier.fc2.bias", ParamGroup::classifier, Shape{1, config.num_classes});
    he("projector.fc1.weight", ParamGroup::projector, Shape{c, config.projector_hidden}, c);
    zeros("projector.fc1.bias", ParamGroup::projector, Shape{1, config.projector_hidden});
    he("projector.fc2.weight", ParamGroup::projector, Shape{config.projector_hidden, config.projection_dim},
       config.projector_hidden);
    zeros("projector.fc2.bias", ParamGroup::projector, Shape{1, config.projection_dim});
    return model;
}

BoundParams bind(Tape& tape, const ModelParams& params, bool requires_grad) {
    BoundParams bound;
    bound.vars.reserve(params.size());
    for (const auto& e : params.entries) {
        Tensor copy = e.value;
        copy.set_requires_grad(requires_grad);
        bound.vars.push_back(tape.input(std::move(copy)));
    }
    return bound;
}

Var zpool(const Var& x, std::size_t axis) {
    Shape pooled = x.shape();
    pooled.erase(pooled.begin() + static_cast<std::ptrdiff_t>(axis));
    Shape stacked = pooled;
    stacked.insert(stacked.begin(), 1);
    const Var mx = ops::reshape(ops::max(x, axis), stacked);
    const Var mn = ops::reshape(ops::mean(x, axis), stacked);
    return ops::concat({mx, mn}, 0);
}

Var triplet_attention(const Var& x, const std::array<Var, 3>& weights, const std::array<Var, 3>& biases) {
    if (x.shape().size() != 3) {
        throw ShapeError("triplet_attention: expected C x H x W input, got " + shape_string(x.shape()));
    }
    for (const Var& w : weights) {
        const Shape& s = w.shape();
        if (s.size() != 4 || s[0] != 1 || s[1] != 2) {
            throw ShapeError("triplet_attention: attention kernel must be 1 x 2 x k x k, got " + shape_string(s));
        }
        if (s[2] != s[3]) throw ShapeError("triplet_attention: attention kernel must be square, got " + shape_string(s));
    }
    // Permutation that moves the branch's channel-role axis to the front; each is its own inverse.
    static const std::array<std::vector<std::size_t>, 3> perms{
        std::vector<std::size_t>{0, 1, 2}, std::vector<std::size_t>{1, 0, 2}, std::vector<std::size_t>{2, 1, 0}};
    Var total;
    for (std::size_t b = 0; b < 3; ++b) {
        const Var rotated = b == 0 ? x : ops::permute(x, perms[b]);
        const std::size_t pad = weights[b].shape()[2] / 2;
        const Var attn = ops::sigmoid(ops::conv2d(zpool(rotated, 0), weights[b], biases[b], 1, pad));
        Var gated = ops::gate(rotated, attn);
        if (b != 0) gated = ops::permute(gated, perms[b]);
        total = b == 0 ? gated : ops::add(total, gated);
    }
    return ops::affine(total, 1.0 / 3.0, 0.0);
}

Encoded encode(Tape& tape, const Model& model, const BoundParams& params, const Tensor& image) {
    const std::size_t factor = model.config.downsample();
    if (image.rank() != 2 || image.dim(0) != image.dim(1)) {
        throw ShapeError("encode: expected a square image, got " + shape_string(image.shape()));
    }
    if (image.dim(0) % factor != 0) {
        throw ShapeError("encode: image side " + std::to_string(image.dim(0)) +
                         " is not divisible by the downsample factor " + std::to_string(factor));
    }
    const ParamLayout layout(model.config);
    Encoded out;
    Tensor img = image.reshaped(Shape{1, image.dim(0), image.dim(1)});
    for (double& v : img.data()) v *= kInputGain;
    Var x = tape.constant(img);
    for (std::size_t s = 0; s < layout.stages; ++s) {
        x = ops::relu(ops::conv2d(x, params[layout.conv_weight(s)], params[layout.conv_bias(s)], 2, 1));
        out.layers.push_back(x);
    }
    const std::array<Var, 3> w{params[layout.attention_weight(0)], params[layout.attention_weight(1)],
                               params[layout.attention_weight(2)]};
    const std::array<Var, 3> b{params[layout.attention_bias(0)], params[layout.attention_bias(1)],
                               params[layout.attention_bias(2)]};
    out.features = triplet_attention(x, w, b);
    out.layers.push_back(out.features);
    return out;
}

Var global_average_pool(const Var& features) {
    const Var pooled = ops::mean(ops::mean(features, 2), 1);
    return ops::reshape(pooled, Shape{1, pooled.shape()[0]});
}

namespace {

Var mlp(const Var& in, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
    const Var hidden = ops::relu(ops::add(ops::matmul(in, w1), b1));
    return ops::add(ops::matmul(hidden, w2), b2);
}

}  // namespace

Var classifier_logits(const Model& model, const BoundParams& params, const Var& features) {
    const ParamLayout layout(model.config);
    return mlp(global_average_pool(features), params[layout.classifier(0)], params[layout.classifier(1)],
               params[layout.classifier(2)], params[layout.classifier(3)]);
}

Var classifier_forward(const Model& model, const BoundParams& params, const Var& features) {
    return ops::sigmoid(classifier_logits(model, params, features));
}

Var projector_forward(const Model& model, const BoundParams& params, const Var& features) {
    const ParamLayout layout(model.config);
    return ops::l2_normalize(mlp(global_average_pool(features), params[layout.projector(0)],
                                 params[layout.projector(1)], params[layout.projector(2)],
                                 params[layout.projector(3)]));
}

// ---------------------------------------------------------------- checkpoint

void write_checkpoint(std::ostream& out, const Model& model) {
    const EncoderConfig& c = model.config;
    out << "scalp-checkpoint 1\n";
    out << "channels=";
    for (std::size_t i = 0; i < c.channels.size(); ++i) out << (i ? "," : "") << c.channels[i];
    out << "\nattention_kernel=" << c.attention_kernel << "\nclassifier_hidden=" << c.classifier_hidden
        << "\nprojector_hidden=" << c.projector_hidden << "\nprojection_dim=" << c.projection_dim
        << "\nnum_classes=" << c.num_classes << "\ntensors=" << model.params.size() << "\nend\n";
    for (const auto& e : model.params.entries) write_tensor(out, e.value);
}

Model read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "scalp-checkpoint 1") {
        throw std::runtime_error("checkpoint: missing 'scalp-checkpoint 1' header");
    }
    EncoderConfig config;
    std::size_t tensors = 0;
    while (std::getline(in, line) && line != "end") {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "channels") {
            config.channels.clear();
            std::istringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) config.channels.push_back(std::stoul(item));
        } else if (key == "attention_kernel") {
            config.attention_kernel = std::stoul(value);
        } else if (key == "classifier_hidden") {
            config.classifier_hidden = std::stoul(value);
        } else if (key == "projector_hidden") {
            config.projector_hidden = std::stoul(value);
        } else if (key == "projection_dim") {
            config.projection_dim = std::stoul(value);
        } else if (key == "num_classes") {
            config.num_classes = std::stoul(value);
        } else if (key == "tensors") {
            tensors = std::stoul(value);
        } else {
            throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
        }
    }
    if (line != "end") throw std::runtime_error("checkpoint: header not terminated by 'end'");
    Model model = Model::initialize(config, 0);
    if (tensors != model.params.size()) {
        throw std::runtime_error("checkpoint: expected " + std::to_string(model.params.size()) + " tensors, header says " +
                                 std::to_string(tensors));
    }
    for (auto& e : model.params.entries) {
        Tensor t = read_tensor(in);
        if (t.shape() != e.value.shape()) {
            throw std::runtime_error("checkpoint: tensor '" + e.name + "' has shape " + shape_string(t.shape()) +
                                     ", expected " + shape_string(e.value.shape()));
        }
        e.value = std::move(t);
    }
    return model;
}

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(in);
}

}  // namespace scalp
