#include "scalp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <sstream>

namespace scalp {

double WeightDecay::of(ParamGroup group) const {
    switch (group) {
        case ParamGroup::encoder: return encoder;
        case ParamGroup::classifier: return classifier;
        case ParamGroup::projector: return projector;
    }
    return 0.0;
}

void OptimizerConfig::validate() const {
    if (!(base_lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("optimizer: gamma must lie in (0, 1]");
    if (step_size == 0) throw std::invalid_argument("optimizer: step size must be positive");
    if (!(weight_decay.encoder >= 0.0 && weight_decay.classifier >= 0.0 && weight_decay.projector >= 0.0)) {
        throw std::invalid_argument("optimizer: weight decays must be non-negative");
    }
    if (epochs == 0) throw std::invalid_argument("optimizer: epochs must be positive");
    if (batch_size < 2) throw std::invalid_argument("optimizer: batch size must be at least 2");
}

double lr_at(std::size_t epoch, const OptimizerConfig& config) {
    double lr = config.base_lr;
    for (std::size_t i = 0; i < epoch / config.step_size; ++i) lr *= config.gamma;
    return lr;
}

void sgd_step(ModelParams& params, const std::vector<Tensor>& grads, double lr, const WeightDecay& decay) {
    if (grads.size() != params.size()) throw ShapeError("sgd_step: gradient count does not match parameter count");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Tensor& g = grads[p];
        if (g.shape() != params[p].shape()) {
            throw ShapeError("sgd_step: gradient of " + params.entries[p].name + " has shape " +
                             shape_string(g.shape()) + ", expected " + shape_string(params[p].shape()));
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw TrainingError("sgd_step: non-finite gradient in " + params.entries[p].name);
            }
        }
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        const double wd = decay.of(params.entries[p].group);
        Tensor& w = params[p];
        const Tensor& g = grads[p];
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
    }
}

namespace {

// One study's forward graph. Its heads are cut loose from the loss graph so
// each study can run on its own tape.
struct StudyGraph {
    std::unique_ptr<Tape> tape;
    BoundParams params;
    Var probs;      // 1 x K, only for queries
    Var embedding;  // 1 x d, only with the contrastive term
};

}  // namespace

BatchResult batch_loss(const Model& model, const Dataset& dataset, const ContrastiveBatch& batch,
                       const LossConfig& loss, bool contrastive, bool with_grads) {
    if (batch.entries.empty()) throw std::invalid_argument("batch_loss: empty batch");

    // Unique studies in first-appearance order, with whether each is a query.
    std::vector<std::size_t> studies;
    std::vector<bool> is_query;
    std::vector<std::size_t> slot(dataset.size(), SIZE_MAX);
    auto add_study = [&](std::size_t s, bool query) {
        if (slot[s] == SIZE_MAX) {
            slot[s] = studies.size();
            studies.push_back(s);
            is_query.push_back(query);
        } else if (query) {
            is_query[slot[s]] = true;
        }
    };
    for (const BatchEntry& e : batch.entries) {
        add_study(e.query, true);
        if (contrastive) {
            add_study(e.positive, false);
            for (std::size_t n : e.negatives) add_study(n, false);
        }
    }

    const long long count = static_cast<long long>(studies.size());
    std::vector<StudyGraph> graphs(studies.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < count; ++i) {
        try {
            StudyGraph& g = graphs[i];
            g.tape = std::make_unique<Tape>();
            g.params = bind(*g.tape, model.params, with_grads);
            const Encoded enc = encode(*g.tape, model, g.params, dataset.study(studies[i]).image);
            if (is_query[i]) g.probs = classifier_forward(model, g.params, enc.features);
            if (contrastive) g.embedding = projector_forward(model, g.params, enc.features);
        } catch (...) {
#pragma omp critical(scalp_batch_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    // Loss graph over the head outputs.
    Tape head;
    std::vector<Var> probs_leaf(studies.size()), emb_leaf(studies.size());
    for (std::size_t i = 0; i < studies.size(); ++i) {
        if (graphs[i].probs.valid()) probs_leaf[i] = head.leaf(graphs[i].probs.value());
        if (graphs[i].embedding.valid()) emb_leaf[i] = head.leaf(graphs[i].embedding.value());
    }
    Var l_ce;
    for (const BatchEntry& e : batch.entries) {
        const Study& q = dataset.study(e.query);
        Tensor labels(Shape{1, q.labels.size()});
        for (std::size_t k = 0; k < q.labels.size(); ++k) labels[k] = q.labels[k];
        const Var term = bce_total(probs_leaf[slot[e.query]], labels, loss.probability_clamp);
        l_ce = l_ce.valid() ? ops::add(l_ce, term) : term;
    }
    Var l_total;
    BatchResult result;
    result.l_ce = l_ce.value().item();
    if (contrastive) {
        std::vector<EntryEmbeddings> entries;
        for (const BatchEntry& e : batch.entries) {
            EntryEmbeddings ee{emb_leaf[slot[e.query]], emb_leaf[slot[e.positive]], {}};
            for (std::size_t n : e.negatives) ee.negatives.push_back(emb_leaf[slot[n]]);
            entries.push_back(std::move(ee));
        }
        for (std::size_t i = 0; i < studies.size(); ++i) {
            const auto v = emb_leaf[i].value().data();
            if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
                throw TrainingError("train: study '" + dataset.study(studies[i]).study_id +
                                    "' has a zero embedding (every projector unit is inactive)");
            }
        }
        const Var l_con = contrastive_total(entries, loss);
        l_total = total_loss(l_ce, l_con, loss.lambda);
        result.l_con = l_con.value().item();
    } else {
        l_total = l_ce;
    }
    result.l_total = l_total.value().item();
    if (!with_grads) return result;

    const Gradients head_grads = head.backward(l_total);
    std::vector<std::vector<Tensor>> per_study(studies.size());
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < count; ++i) {
        try {
            StudyGraph& g = graphs[i];
            std::vector<std::pair<Var, Tensor>> seeds;
            if (g.probs.valid()) seeds.emplace_back(g.probs, head_grads.of(probs_leaf[i]));
            if (g.embedding.valid()) seeds.emplace_back(g.embedding, head_grads.of(emb_leaf[i]));
            const Gradients grads = g.tape->backward(seeds);
            per_study[i].reserve(g.params.vars.size());
            for (const Var& v : g.params.vars) per_study[i].push_back(grads.of(v));
            g.tape.reset();
        } catch (...) {
#pragma omp critical(scalp_batch_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    // Reduce in dataset order: independent of the thread count, and of which extra
    // studies the contrastive term pulled in (their zero gradients add exactly).
    std::vector<std::size_t> order(studies.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return studies[a] < studies[b]; });
    result.grads = std::move(per_study[order[0]]);
    for (std::size_t o = 1; o < order.size(); ++o) {
        const std::size_t i = order[o];
        for (std::size_t p = 0; p < result.grads.size(); ++p) {
            Tensor& acc = result.grads[p];
            const Tensor& add = per_study[i][p];
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += add[j];
        }
        per_study[i].clear();
    }
    return result;
}

std::string to_json(const EpochLog& log) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"epoch\": " << log.epoch << ", \"lr\": " << log.lr << ", \"l_ce\": " << log.l_ce
       << ", \"l_con\": " << log.l_con << ", \"l_total\": " << log.l_total << "}";
    return os.str();
}

TrainResult train(const Dataset& dataset, Model model, const LossConfig& loss, const OptimizerConfig& optimizer,
                  std::uint64_t seed, const TrainOptions& options) {
    loss.validate();
    optimizer.validate();
    TrainResult result;
    const std::size_t k = optimizer.effective_negatives();
    for (std::size_t epoch = 0; epoch < optimizer.epochs; ++epoch) {
        const double lr = lr_at(epoch, optimizer);
        const auto batches = epoch_batches(dataset, optimizer.batch_size, k, seed, epoch);
        if (batches.empty()) {
            throw TrainingError("train: fewer eligible patients than the batch size " +
                                std::to_string(optimizer.batch_size));
        }
        EpochLog summary{epoch, lr, 0.0, 0.0, 0.0};
        for (std::size_t b = 0; b < batches.size(); ++b) {
            BatchResult r = batch_loss(model, dataset, batches[b], loss, options.contrastive, true);
            const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b);
            if (!std::isfinite(r.l_total)) throw TrainingError("train: non-finite loss at " + where);
            try {
                sgd_step(model.params, r.grads, lr, optimizer.weight_decay);
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " at " + where);
            }
            result.steps.push_back({epoch, b, lr, r.l_ce, r.l_con, r.l_total});
            summary.l_ce += r.l_ce;
            summary.l_con += r.l_con;
            summary.l_total += r.l_total;
        }
        const double n = static_cast<double>(batches.size());
        summary.l_ce /= n;
        summary.l_con /= n;
        summary.l_total /= n;
        result.epochs.push_back(summary);
        if (options.on_epoch) options.on_epoch(summary);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace scalp
