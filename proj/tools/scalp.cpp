// scalp: dataset synthesis, training, evaluation, heatmaps and boxes.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scalp/bbox.hpp"
#include "scalp/cam.hpp"
#include "scalp/config.hpp"
#include "scalp/data.hpp"
#include "scalp/eval.hpp"
#include "scalp/model.hpp"
#include "scalp/rng.hpp"
#include "scalp/trainer.hpp"

namespace fs = std::filesystem;
using namespace scalp;

namespace {

// Flag values as strings; applied on top of the config file in one place so
// flags always win.
struct Overrides {
    std::optional<std::string> config;
    std::vector<std::pair<std::string, std::string>> pairs;
    bool negatives_only = false;
};

void add_flag(CLI::App* cmd, Overrides& o, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&o, key](const std::string& v) { o.pairs.emplace_back(key, v); }, help);
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "key = value config file");
    add_flag(cmd, o, "--seed", "seed", "random seed");
    add_flag(cmd, o, "--out", "out", "output directory");
    add_flag(cmd, o, "--data", "data", "dataset directory with manifest.csv");
}

void add_training(CLI::App* cmd, Overrides& o) {
    add_flag(cmd, o, "--lambda", "lambda", "classification weight in the total loss");
    add_flag(cmd, o, "--tau", "tau", "contrastive temperature");
    add_flag(cmd, o, "--batch-size", "batch_size", "queries per batch");
    add_flag(cmd, o, "--negatives", "negatives", "negative keys per query (0 = batch size - 1)");
    add_flag(cmd, o, "--epochs", "epochs", "training epochs");
    cmd->add_flag("--negatives-only", o.negatives_only, "negatives-only softmax denominator");
}

void add_boxes(CLI::App* cmd, Overrides& o) {
    add_flag(cmd, o, "--threshold", "threshold", "binarization threshold (strict)");
    add_flag(cmd, o, "--candidates", "candidates", "candidate rectangles");
    add_flag(cmd, o, "--cam", "cam", "gradcam or gradcampp");
    add_flag(cmd, o, "--checkpoint", "checkpoint", "model checkpoint");
}

RunConfig resolve(const Overrides& o) {
    RunConfig config;
    if (o.config) apply_config_file(config, *o.config);
    for (const auto& [k, v] : o.pairs) {
        try {
            config.set(k, v);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (flag)");
        }
    }
    if (o.negatives_only) config.loss.include_positive_in_denominator = false;
    config.validate();
    return config;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void prepare_out(const RunConfig& config) {
    fs::create_directories(config.out);
    write_text(fs::path(config.out) / "config.txt", config.to_text());
}

Dataset load_data(const RunConfig& config) {
    if (config.data.empty()) throw ConfigError("--data is required");
    const fs::path dir(config.data);
    const fs::path boxes = dir / "boxes.csv";
    return load_manifest((dir / "manifest.csv").string(),
                         fs::exists(boxes) ? std::optional<std::string>(boxes.string()) : std::nullopt);
}

std::string heatmap_stem(const std::string& study_id, int disease) {
    return study_id + ".d" + std::to_string(disease);
}

int cmd_synth(const RunConfig& config) {
    SyntheticConfig s = config.synthetic;
    s.seed = config.seed;
    s.downsample_factor = config.encoder.downsample();
    const Dataset ds = generate_synthetic(s);
    const std::string dir = config.data.empty() ? config.out : config.data;
    fs::create_directories(dir);
    write_dataset(dir, ds);
    write_text(fs::path(dir) / "config.txt", config.to_text());
    std::cout << "wrote " << ds.size() << " studies and " << ds.boxes().size() << " boxes to " << dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, bool contrastive) {
    const Dataset all = load_data(config);
    const SplitSet split = split_by_patient(all, config.split, config.seed);
    const Dataset train_set = all.subset(split.train);
    prepare_out(config);
    std::ofstream log(fs::path(config.out) / "log.jsonl", std::ios::binary);
    TrainOptions options;
    options.contrastive = contrastive;
    options.on_epoch = [&](const EpochLog& e) {
        const std::string line = to_json(e);
        log << line << "\n";
        log.flush();
        std::cout << line << "\n";
    };
    const Model init = Model::initialize(config.encoder, derive_seed(config.seed, 1));
    const TrainResult result = train(train_set, init, config.loss, config.optimizer, config.seed, options);
    save_checkpoint(config.checkpoint_path(), result.model);
    std::cout << "checkpoint " << config.checkpoint_path() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& config) {
    const Dataset all = load_data(config);
    const Model model = load_checkpoint(config.checkpoint_path());
    const SplitSet split = split_by_patient(all, config.split, config.seed);
    const Dataset test_set = all.subset(split.test);
    prepare_out(config);
    MetricsReport report;
    report.run = {"eval", config.seed, config.loss.lambda, config.loss.tau, config.optimizer.batch_size,
                  config.optimizer.effective_negatives(), config.optimizer.epochs, true, std::nullopt};
    report.classification = evaluate_classification(model, test_set);
    if (config.localization && !test_set.boxes().empty()) {
        BoxPredictions predictions;
        for (const auto& [key, det] : localize(model, test_set, config.cam, config.box)) predictions.emplace(key, det.box);
        report.localization = localization_table(predictions, test_set.boxes());
        write_text(fs::path(config.out) / "localization.csv", localization_csv(*report.localization));
    }
    write_text(fs::path(config.out) / "metrics.json", to_json(report));
    std::cout << "mean AUC "
              << (report.classification.mean ? std::to_string(*report.classification.mean) : std::string("n/a")) << "\n";
    return 0;
}

int cmd_heatmap(const RunConfig& config) {
    const Dataset all = load_data(config);
    const Model model = load_checkpoint(config.checkpoint_path());
    const SplitSet split = split_by_patient(all, config.split, config.seed);
    const Dataset test_set = all.subset(split.test);
    prepare_out(config);
    const fs::path dir = config.heatmap_dir();
    fs::create_directories(dir);
    const std::vector<ClassScores> scores = predict(model, test_set);
    std::size_t written = 0;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const Study& s = test_set.study(i);
        for (std::size_t k = 0; k < kNumDiseases; ++k) {
            if (scores[i][k] <= 0.5) continue;
            const int disease = static_cast<int>(k + 1);
            const Heatmap h = compute_heatmap(model, s.image, disease, config.cam);
            const std::string stem = heatmap_stem(s.study_id, disease);
            write_pgm((dir / (stem + ".pgm")).string(), h.scaled);
            write_pgm((dir / (stem + ".overlay.pgm")).string(), overlay(s.image, h.scaled));
            save_tensor((dir / (stem + ".bin")).string(), h.values);
            ++written;
        }
    }
    std::cout << "wrote " << written << " heatmaps to " << dir.string() << "\n";
    return 0;
}

// Heatmap files are <study_id>.d<k>.pgm; overlays are skipped.
std::optional<std::pair<std::string, int>> parse_heatmap_name(const std::string& name) {
    const std::string suffix = ".pgm";
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        return std::nullopt;
    }
    const std::string stem = name.substr(0, name.size() - suffix.size());
    const auto dot = stem.rfind(".d");
    if (dot == std::string::npos || dot == 0) return std::nullopt;
    const std::string digits = stem.substr(dot + 2);
    if (digits.size() != 1 || digits[0] < '1' || digits[0] > '8') return std::nullopt;
    return std::make_pair(stem.substr(0, dot), digits[0] - '0');
}

int cmd_bbox(const RunConfig& config) {
    const fs::path dir = config.heatmap_dir();
    if (!fs::is_directory(dir)) throw ConfigError("heatmap directory " + dir.string() + " does not exist");
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.emplace_back(entry.path().filename().string(), entry.path());
    }
    std::sort(files.begin(), files.end());
    prepare_out(config);
    std::ostringstream csv;
    csv << "study_id,disease,x1,y1,x2,y2,score\n";
    std::size_t rows = 0;
    for (const auto& [name, path] : files) {
        const auto key = parse_heatmap_name(name);
        if (!key) continue;
        const std::optional<Detection> det = generate(read_pgm_raw(path.string()), config.box);
        if (!det) continue;
        char score[32];
        std::snprintf(score, sizeof score, "%.6f", det->score);
        csv << key->first << ',' << key->second << ',' << det->box.x1 << ',' << det->box.y1 << ',' << det->box.x2
            << ',' << det->box.y2 << ',' << score << '\n';
        ++rows;
    }
    write_text(fs::path(config.out) / "boxes.csv", csv.str());
    std::cout << "wrote " << rows << " boxes to " << (fs::path(config.out) / "boxes.csv").string() << "\n";
    return 0;
}

int cmd_experiment(const RunConfig& config) {
    const Dataset all = load_data(config);
    prepare_out(config);
    ExperimentSettings settings;
    settings.loss = config.loss;
    settings.optimizer = config.optimizer;
    settings.encoder = config.encoder;
    settings.seed = config.seed;
    settings.split = config.split;
    settings.cam = config.cam;
    settings.box = config.box;
    ExperimentGrid grid = config.grid;
    grid.localization = config.localization && !all.boxes().empty();
    const ExperimentReport report = run_experiments(all, grid, settings, [](const MetricsReport& r) {
        std::cout << r.run.label << (r.run.fold ? " fold " + std::to_string(*r.run.fold) : std::string()) << ": mean AUC "
                  << (r.classification.mean ? std::to_string(*r.classification.mean) : std::string("n/a")) << "\n";
    });
    write_text(fs::path(config.out) / "experiments.json", to_json(report));
    write_text(fs::path(config.out) / "summary.csv", summary_csv(report));
    if (report.best_lambda) std::cout << "best lambda " << *report.best_lambda << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scalp: patient-metadata contrastive training, heatmaps and boxes"};
    app.require_subcommand(1, 1);
    Overrides o;
    bool bce_only = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, o);
    add_flag(synth, o, "--patients", "patients", "patients");
    add_flag(synth, o, "--studies", "studies", "studies per patient");
    add_flag(synth, o, "--side", "side", "image side in pixels");

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, o);
    add_training(train_cmd, o);
    add_flag(train_cmd, o, "--checkpoint", "checkpoint", "checkpoint path");
    train_cmd->add_flag("--bce-only", bce_only, "classification loss only");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd, o);
    add_boxes(eval_cmd, o);

    auto* heatmap_cmd = app.add_subcommand("heatmap", "export heatmaps for predicted-positive classes");
    add_common(heatmap_cmd, o);
    add_boxes(heatmap_cmd, o);
    add_flag(heatmap_cmd, o, "--heatmaps", "heatmaps", "heatmap directory");

    auto* bbox_cmd = app.add_subcommand("bbox", "boxes from exported heatmaps");
    add_common(bbox_cmd, o);
    add_boxes(bbox_cmd, o);
    add_flag(bbox_cmd, o, "--heatmaps", "heatmaps", "heatmap directory");

    auto* exp_cmd = app.add_subcommand("experiment", "lambda grid, ablation and batch-size runs");
    add_common(exp_cmd, o);
    add_training(exp_cmd, o);
    add_boxes(exp_cmd, o);
    add_flag(exp_cmd, o, "--folds", "folds", "cross-validation folds (0 = single split)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        const RunConfig config = resolve(o);
        if (synth->parsed()) return cmd_synth(config);
        if (train_cmd->parsed()) return cmd_train(config, !bce_only);
        if (eval_cmd->parsed()) return cmd_eval(config);
        if (heatmap_cmd->parsed()) return cmd_heatmap(config);
        if (bbox_cmd->parsed()) return cmd_bbox(config);
        if (exp_cmd->parsed()) return cmd_experiment(config);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
