#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scalp/bbox.hpp"
#include "scalp/cam.hpp"
#include "scalp/data.hpp"
#include "scalp/eval.hpp"
#include "scalp/model.hpp"
#include "scalp/objective.hpp"
#include "scalp/trainer.hpp"

namespace scalp {

/// Bad key, unparsable value, or a value outside its module's range.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Every setting of a run. Config files hold one `key = value` per line with
/// `#` comments; keys are the names printed by to_text().
struct RunConfig {
    std::uint64_t seed = 7;
    LossConfig loss;
    OptimizerConfig optimizer;
    EncoderConfig encoder;
    BoxParams box;
    CamMethod cam = CamMethod::gradcampp;
    SyntheticConfig synthetic;
    SplitFractions split;
    ExperimentGrid grid;
    bool localization = true;

    std::string data;        ///< dataset directory holding manifest.csv (and boxes.csv)
    std::string checkpoint;  ///< empty means <out>/checkpoint.bin
    std::string heatmaps;    ///< empty means <out>/heatmaps
    std::string out = "run/default";

    /// Throws ConfigError for an unknown key or a malformed value.
    void set(std::string_view key, std::string_view value);
    /// Range checks of every module; throws ConfigError.
    void validate() const;
    /// Effective configuration, one `key = value` per line in a fixed order.
    std::string to_text() const;

    std::string checkpoint_path() const;
    std::string heatmap_dir() const;
};

/// Applies the lines of a config file on top of `config`. Errors name the line.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::string& path);

}  // namespace scalp
