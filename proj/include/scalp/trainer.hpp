#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalp/data.hpp"
#include "scalp/model.hpp"
#include "scalp/objective.hpp"
#include "scalp/sampler.hpp"

namespace scalp {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct WeightDecay {
    double encoder = 1e-4;
    double classifier = 1e-4;
    double projector = 1e-6;

    double of(ParamGroup group) const;
};

struct OptimizerConfig {
    double base_lr = 0.01;
    std::size_t step_size = 10;
    double gamma = 0.1;
    WeightDecay weight_decay;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::size_t negatives = 0;  ///< 0 means batch_size - 1

    std::size_t effective_negatives() const { return negatives == 0 ? batch_size - 1 : negatives; }
    void validate() const;
};

/// base_lr * gamma^floor(epoch / step_size).
double lr_at(std::size_t epoch, const OptimizerConfig& config);

/// w <- w - lr (g + wd w) with the decay of each parameter's group. Throws
/// TrainingError naming the parameter on a non-finite gradient.
void sgd_step(ModelParams& params, const std::vector<Tensor>& grads, double lr, const WeightDecay& decay);

struct BatchResult {
    double l_ce = 0.0;
    double l_con = 0.0;
    double l_total = 0.0;
    std::vector<Tensor> grads;  ///< one per parameter; empty when not requested
};

/// Loss of one batch and its gradient with respect to every parameter. With
/// `contrastive` false the loss is the classification term alone and the
/// projector is left out of the graph.
BatchResult batch_loss(const Model& model, const Dataset& dataset, const ContrastiveBatch& batch,
                       const LossConfig& loss, bool contrastive = true, bool with_grads = true);

struct StepLog {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double lr = 0.0;
    double l_ce = 0.0;
    double l_con = 0.0;
    double l_total = 0.0;
};

/// Means of the step losses over one epoch.
struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double l_ce = 0.0;
    double l_con = 0.0;
    double l_total = 0.0;
};

std::string to_json(const EpochLog& log);

struct TrainOptions {
    /// False runs the classification-only loop (same batches, no contrastive term).
    bool contrastive = true;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> epochs;
    std::vector<StepLog> steps;
};

TrainResult train(const Dataset& dataset, Model model, const LossConfig& loss, const OptimizerConfig& optimizer,
                  std::uint64_t seed, const TrainOptions& options = {});

}  // namespace scalp
