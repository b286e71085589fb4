#include "scalp/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace scalp {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config: " + std::string(key) + " expects a number, got '" + std::string(v) + "'");
    }
    return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

template <class T, class F>
std::vector<T> parse_list(std::string_view v, F parse_one) {
    std::vector<T> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(parse_one(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) out += fmt(values[i]);
        else out += std::to_string(values[i]);
    }
    return out;
}

struct Field {
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SCALP_DOUBLE(member) \
    Field{[](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_double(k, v); }, \
          [](const RunConfig& c) { return fmt(c.member); }}
#define SCALP_SIZE(member) \
    Field{[](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_uint(k, v); }, \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define SCALP_BOOL(member) \
    Field{[](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_bool(k, v); }, \
          [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define SCALP_STRING(member) \
    Field{[](RunConfig& c, std::string_view, std::string_view v) { c.member = std::string(v); }, \
          [](const RunConfig& c) { return c.member; }}

// Declaration order is the order of to_text().
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table{
        {"seed", SCALP_SIZE(seed)},
        {"lambda", SCALP_DOUBLE(loss.lambda)},
        {"tau", SCALP_DOUBLE(loss.tau)},
        {"negatives_only", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                                  c.loss.include_positive_in_denominator = !parse_bool(k, v);
                              },
                              [](const RunConfig& c) {
                                  return std::string(c.loss.include_positive_in_denominator ? "false" : "true");
                              }}},
        {"probability_clamp", SCALP_DOUBLE(loss.probability_clamp)},
        {"base_lr", SCALP_DOUBLE(optimizer.base_lr)},
        {"step_size", SCALP_SIZE(optimizer.step_size)},
        {"gamma", SCALP_DOUBLE(optimizer.gamma)},
        {"weight_decay_encoder", SCALP_DOUBLE(optimizer.weight_decay.encoder)},
        {"weight_decay_classifier", SCALP_DOUBLE(optimizer.weight_decay.classifier)},
        {"weight_decay_projector", SCALP_DOUBLE(optimizer.weight_decay.projector)},
        {"epochs", SCALP_SIZE(optimizer.epochs)},
        {"batch_size", SCALP_SIZE(optimizer.batch_size)},
        {"negatives", SCALP_SIZE(optimizer.negatives)},
        {"channels", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                               c.encoder.channels = parse_list<std::size_t>(
                                   v, [&](std::string_view x) { return static_cast<std::size_t>(parse_uint(k, x)); });
                           },
                           [](const RunConfig& c) { return fmt_list(c.encoder.channels); }}},
        {"attention_kernel", SCALP_SIZE(encoder.attention_kernel)},
        {"classifier_hidden", SCALP_SIZE(encoder.classifier_hidden)},
        {"projector_hidden", SCALP_SIZE(encoder.projector_hidden)},
        {"projection_dim", SCALP_SIZE(encoder.projection_dim)},
        {"threshold", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                                const auto t = parse_uint(k, v);
                                if (t > 255) throw ConfigError("config: threshold must lie in [0, 255]");
                                c.box.threshold = static_cast<int>(t);
                            },
                            [](const RunConfig& c) { return std::to_string(c.box.threshold); }}},
        {"candidates", SCALP_SIZE(box.candidates)},
        {"suppress_iou", SCALP_DOUBLE(box.suppress_iou)},
        {"cam", Field{[](RunConfig& c, std::string_view, std::string_view v) {
                          const auto m = parse_cam_method(v);
                          if (!m) throw ConfigError("config: cam must be gradcam or gradcampp, got '" + std::string(v) + "'");
                          c.cam = *m;
                      },
                      [](const RunConfig& c) { return std::string(cam_name(c.cam)); }}},
        {"localization", SCALP_BOOL(localization)},
        {"patients", SCALP_SIZE(synthetic.patients)},
        {"studies", SCALP_SIZE(synthetic.studies_per_patient)},
        {"side", SCALP_SIZE(synthetic.image_side)},
        {"healthy_fraction", SCALP_DOUBLE(synthetic.healthy_fraction)},
        {"incidental_probability", SCALP_DOUBLE(synthetic.incidental_probability)},
        {"split_train", SCALP_DOUBLE(split.train)},
        {"split_val", SCALP_DOUBLE(split.val)},
        {"split_test", SCALP_DOUBLE(split.test)},
        {"lambdas", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                              c.grid.lambdas = parse_list<double>(v, [&](std::string_view x) { return parse_double(k, x); });
                          },
                          [](const RunConfig& c) { return fmt_list(c.grid.lambdas); }}},
        {"without_contrastive", SCALP_BOOL(grid.without_contrastive)},
        {"batch_sizes", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                                  c.grid.batch_sizes = parse_list<std::size_t>(
                                      v, [&](std::string_view x) { return static_cast<std::size_t>(parse_uint(k, x)); });
                              },
                              [](const RunConfig& c) { return fmt_list(c.grid.batch_sizes); }}},
        {"folds", SCALP_SIZE(grid.folds)},
        {"data", SCALP_STRING(data)},
        {"checkpoint", SCALP_STRING(checkpoint)},
        {"heatmaps", SCALP_STRING(heatmaps)},
        {"out", SCALP_STRING(out)},
    };
    return table;
}

#undef SCALP_DOUBLE
#undef SCALP_SIZE
#undef SCALP_BOOL
#undef SCALP_STRING

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    for (const auto& [name, field] : fields()) {
        if (name == key) {
            field.set(*this, key, trim(value));
            return;
        }
    }
    throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
    try {
        loss.validate();
        optimizer.validate();
        encoder.validate();
        box.validate();
        grid.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (optimizer.negatives >= optimizer.batch_size * 64) {
        throw ConfigError("config: negatives is implausibly large for the batch size");
    }
    if (synthetic.patients == 0 || synthetic.studies_per_patient == 0) {
        throw ConfigError("config: patients and studies must be positive");
    }
    if (synthetic.image_side == 0 || synthetic.image_side % encoder.downsample() != 0) {
        throw ConfigError("config: side must be a positive multiple of " + std::to_string(encoder.downsample()));
    }
    if (!(synthetic.healthy_fraction >= 0.0 && synthetic.healthy_fraction <= 1.0) ||
        !(synthetic.incidental_probability >= 0.0 && synthetic.incidental_probability <= 1.0)) {
        throw ConfigError("config: healthy_fraction and incidental_probability must lie in [0, 1]");
    }
    const double total = split.train + split.val + split.test;
    if (split.train <= 0.0 || split.val < 0.0 || split.test <= 0.0 || std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("config: split fractions must be non-negative, with positive train and test, and sum to 1");
    }
    if (out.empty()) throw ConfigError("config: out must not be empty");
}

std::string RunConfig::to_text() const {
    std::string text;
    for (const auto& [name, field] : fields()) text += name + " = " + field.get(*this) + "\n";
    return text;
}

std::string RunConfig::checkpoint_path() const { return checkpoint.empty() ? out + "/checkpoint.bin" : checkpoint; }
std::string RunConfig::heatmap_dir() const { return heatmaps.empty() ? out + "/heatmaps" : heatmaps; }

void apply_config_text(RunConfig& config, std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
        }
        try {
            config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
        }
    }
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(config, ss.str());
}

}  // namespace scalp
