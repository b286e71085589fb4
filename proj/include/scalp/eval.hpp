#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scalp/bbox.hpp"
#include "scalp/cam.hpp"
#include "scalp/data.hpp"
#include "scalp/model.hpp"
#include "scalp/objective.hpp"
#include "scalp/trainer.hpp"

namespace scalp {

/// Mann-Whitney AUROC, ties counted as half. Absent when only one class is present.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

inline constexpr std::array<double, 7> kIouThresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};

using ClassScores = std::array<double, kNumDiseases>;

/// Sigmoid outputs per study, in dataset order.
std::vector<ClassScores> predict(const Model& model, const Dataset& dataset);

struct ClassificationMetrics {
    std::array<std::optional<double>, kNumDiseases> auc;
    std::optional<double> mean;  ///< over the classes that have an AUC
    std::vector<std::string> notes;
};

ClassificationMetrics classification_metrics(std::span<const ClassScores> scores, std::span<const Labels> labels);
ClassificationMetrics evaluate_classification(const Model& model, const Dataset& dataset);

/// (study_id, 1-based disease) -> predicted box.
using BoxPredictions = std::map<std::pair<std::string, int>, BoundingBox>;

struct LocalizationTable {
    std::vector<double> thresholds;
    /// accuracy[t][k]; absent when disease k has no ground-truth boxes.
    std::vector<std::array<std::optional<double>, kNumDiseases>> accuracy;
    std::vector<std::optional<double>> mean;
};

/// A ground-truth box counts as localized at T when the prediction for its
/// (study, disease) has IoU > T. Missing predictions count as misses.
LocalizationTable localization_table(const BoxPredictions& predictions, std::span<const GroundTruthBox> truth,
                                     std::span<const double> thresholds = kIouThresholds);

/// One heatmap and box per ground-truth (study, disease) pair of `dataset`.
std::map<std::pair<std::string, int>, Detection> localize(const Model& model, const Dataset& dataset,
                                                          CamMethod method, const BoxParams& params);

struct RunMetadata {
    std::string label;
    std::uint64_t seed = 0;
    double lambda = 0.8;
    double tau = 0.5;
    std::size_t batch_size = 16;
    std::size_t negatives = 15;
    std::size_t epochs = 30;
    bool contrastive = true;
    std::optional<std::size_t> fold;
};

struct MetricsReport {
    RunMetadata run;
    ClassificationMetrics classification;
    std::optional<LocalizationTable> localization;
    std::vector<EpochLog> training;
};

std::string to_json(const MetricsReport& report);
/// Rows are thresholds, columns the eight diseases then the mean.
std::string localization_csv(const LocalizationTable& table);

struct ExperimentSettings {
    LossConfig loss;
    OptimizerConfig optimizer;
    EncoderConfig encoder;
    std::uint64_t seed = 7;
    SplitFractions split;
    CamMethod cam = CamMethod::gradcampp;
    BoxParams box;
};

struct ExperimentGrid {
    std::vector<double> lambdas{0.99, 0.90, 0.85, 0.80, 0.75, 0.70};
    /// Adds a classification-only cell (the lambda = 1.0 endpoint).
    bool without_contrastive = true;
    /// Extra cells at the settings' lambda, one per batch size.
    std::vector<std::size_t> batch_sizes;
    /// 0 or 1: single patient split; otherwise k-fold over patients per cell.
    std::size_t folds = 0;
    bool localization = false;

    void validate() const;
};

struct CrossValidationSummary {
    std::string label;
    std::array<std::optional<double>, kNumDiseases> mean;
    std::array<std::optional<double>, kNumDiseases> stddev;
    std::optional<double> mean_auc;
    std::optional<double> mean_auc_stddev;
};

struct ExperimentReport {
    std::vector<MetricsReport> reports;  ///< one per cell, or per cell and fold
    std::vector<CrossValidationSummary> cross_validation;
    std::optional<double> best_lambda;  ///< highest mean AUC over the lambda cells
};

std::string to_json(const ExperimentReport& report);
/// label, lambda, contrastive, batch_size, fold, mean_auc per report.
std::string summary_csv(const ExperimentReport& report);

/// Trains and evaluates every grid cell with the settings' seed.
ExperimentReport run_experiments(const Dataset& dataset, const ExperimentGrid& grid,
                                 const ExperimentSettings& settings,
                                 const std::function<void(const MetricsReport&)>& on_report = {});

}  // namespace scalp
