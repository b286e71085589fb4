#include "scalp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "scalp/rng.hpp"

namespace scalp {

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the Mann-Whitney count keeps the half-credit for ties integral.
    std::uint64_t twice = 0, negatives_below = 0, positives = 0, negatives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1) ++pos;
            else if (labels[order[j]] == 0) ++neg;
            else throw std::invalid_argument("auroc: labels must be 0 or 1");
            ++j;
        }
        twice += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        positives += pos;
        negatives += neg;
        i = j;
    }
    if (positives == 0 || negatives == 0) return std::nullopt;
    return static_cast<double>(twice) / static_cast<double>(2 * positives * negatives);
}

std::vector<ClassScores> predict(const Model& model, const Dataset& dataset) {
    std::vector<ClassScores> out(dataset.size());
    const long long n = static_cast<long long>(dataset.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < n; ++i) {
        try {
            Tape tape;
            const BoundParams params = bind(tape, model.params, false);
            const Encoded enc = encode(tape, model, params, dataset.study(i).image);
            const Tensor probs = classifier_forward(model, params, enc.features).value();
            for (std::size_t k = 0; k < kNumDiseases; ++k) out[i][k] = probs[k];
        } catch (...) {
#pragma omp critical(scalp_eval_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

ClassificationMetrics classification_metrics(std::span<const ClassScores> scores, std::span<const Labels> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("classification_metrics: length mismatch");
    ClassificationMetrics m;
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < kNumDiseases; ++k) {
        std::vector<double> s(scores.size());
        std::vector<std::uint8_t> y(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            s[i] = scores[i][k];
            y[i] = labels[i][k];
        }
        m.auc[k] = auroc(s, y);
        if (m.auc[k]) {
            total += *m.auc[k];
            ++present;
        } else {
            m.notes.push_back(std::string(kDiseaseNames[k]) + ": single-class labels, AUC undefined and excluded from the mean");
        }
    }
    if (present > 0) m.mean = total / static_cast<double>(present);
    return m;
}

ClassificationMetrics evaluate_classification(const Model& model, const Dataset& dataset) {
    const std::vector<ClassScores> scores = predict(model, dataset);
    std::vector<Labels> labels;
    labels.reserve(dataset.size());
    for (const Study& s : dataset.studies()) labels.push_back(s.labels);
    return classification_metrics(scores, labels);
}

LocalizationTable localization_table(const BoxPredictions& predictions, std::span<const GroundTruthBox> truth,
                                     std::span<const double> thresholds) {
    LocalizationTable table;
    table.thresholds.assign(thresholds.begin(), thresholds.end());
    std::array<std::size_t, kNumDiseases> counts{};
    for (const GroundTruthBox& g : truth) {
        if (g.disease < 1 || g.disease > static_cast<int>(kNumDiseases)) {
            throw std::invalid_argument("localization_table: disease index out of range");
        }
        ++counts[static_cast<std::size_t>(g.disease - 1)];
    }
    for (double t : thresholds) {
        std::array<std::size_t, kNumDiseases> hits{};
        for (const GroundTruthBox& g : truth) {
            const auto it = predictions.find({g.study_id, g.disease});
            if (it != predictions.end() && iou(it->second, g.box) > t) ++hits[static_cast<std::size_t>(g.disease - 1)];
        }
        std::array<std::optional<double>, kNumDiseases> row;
        double sum = 0.0;
        std::size_t present = 0;
        for (std::size_t k = 0; k < kNumDiseases; ++k) {
            if (counts[k] == 0) continue;
            row[k] = static_cast<double>(hits[k]) / static_cast<double>(counts[k]);
            sum += *row[k];
            ++present;
        }
        table.accuracy.push_back(row);
        table.mean.push_back(present ? std::optional<double>(sum / static_cast<double>(present)) : std::nullopt);
    }
    return table;
}

std::map<std::pair<std::string, int>, Detection> localize(const Model& model, const Dataset& dataset,
                                                          CamMethod method, const BoxParams& params) {
    const std::vector<GroundTruthBox>& truth = dataset.boxes();
    std::vector<std::optional<Detection>> found(truth.size());
    const long long n = static_cast<long long>(truth.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < n; ++i) {
        try {
            const GroundTruthBox& g = truth[i];
            const Study& s = dataset.study(*dataset.find(g.study_id));
            found[i] = generate(compute_heatmap(model, s.image, g.disease, method).scaled, params);
        } catch (...) {
#pragma omp critical(scalp_eval_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    std::map<std::pair<std::string, int>, Detection> out;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (found[i]) out.emplace(std::make_pair(truth[i].study_id, truth[i].disease), *found[i]);
    }
    return out;
}

// ---------------------------------------------------------------- reports

namespace {

using json = nlohmann::ordered_json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json auc_object(const std::array<std::optional<double>, kNumDiseases>& values) {
    json o = json::object();
    for (std::size_t k = 0; k < kNumDiseases; ++k) o[std::string(kDiseaseNames[k])] = optional_number(values[k]);
    return o;
}

json report_json(const MetricsReport& r) {
    json j;
    json run;
    run["label"] = r.run.label;
    run["seed"] = r.run.seed;
    run["lambda"] = r.run.lambda;
    run["tau"] = r.run.tau;
    run["batch_size"] = r.run.batch_size;
    run["negatives"] = r.run.negatives;
    run["epochs"] = r.run.epochs;
    run["contrastive"] = r.run.contrastive;
    run["fold"] = r.run.fold ? json(*r.run.fold) : json(nullptr);
    j["run"] = run;
    json cls;
    cls["auc"] = auc_object(r.classification.auc);
    cls["mean_auc"] = optional_number(r.classification.mean);
    cls["notes"] = r.classification.notes;
    j["classification"] = cls;
    if (r.localization) {
        json rows = json::array();
        for (std::size_t t = 0; t < r.localization->thresholds.size(); ++t) {
            json row;
            row["iou_threshold"] = r.localization->thresholds[t];
            row["accuracy"] = auc_object(r.localization->accuracy[t]);
            row["mean"] = optional_number(r.localization->mean[t]);
            rows.push_back(row);
        }
        j["localization"] = rows;
    } else {
        j["localization"] = nullptr;
    }
    json training = json::array();
    for (const EpochLog& e : r.training) {
        training.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"l_ce", e.l_ce}, {"l_con", e.l_con}, {"l_total", e.l_total}});
    }
    j["training"] = training;
    return j;
}

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

}  // namespace

std::string to_json(const MetricsReport& report) { return report_json(report).dump(2) + "\n"; }

std::string localization_csv(const LocalizationTable& table) {
    std::ostringstream os;
    os << "T(IoU)";
    for (auto name : kDiseaseNames) os << ',' << name;
    os << ",Mean\n";
    for (std::size_t t = 0; t < table.thresholds.size(); ++t) {
        os << format_number(table.thresholds[t]).substr(0, 3);
        for (const auto& v : table.accuracy[t]) os << ',' << (v ? format_number(*v) : "");
        os << ',' << (table.mean[t] ? format_number(*table.mean[t]) : "") << '\n';
    }
    return os.str();
}

std::string to_json(const ExperimentReport& report) {
    json j;
    json reports = json::array();
    for (const MetricsReport& r : report.reports) reports.push_back(report_json(r));
    j["reports"] = reports;
    json cv = json::array();
    for (const CrossValidationSummary& s : report.cross_validation) {
        cv.push_back({{"label", s.label},
                      {"mean", auc_object(s.mean)},
                      {"stddev", auc_object(s.stddev)},
                      {"mean_auc", optional_number(s.mean_auc)},
                      {"mean_auc_stddev", optional_number(s.mean_auc_stddev)}});
    }
    j["cross_validation"] = cv;
    j["best_lambda"] = optional_number(report.best_lambda);
    return j.dump(2) + "\n";
}

std::string summary_csv(const ExperimentReport& report) {
    std::ostringstream os;
    os << "label,lambda,contrastive,batch_size,fold,mean_auc\n";
    for (const MetricsReport& r : report.reports) {
        os << r.run.label << ',' << format_number(r.run.lambda) << ',' << (r.run.contrastive ? 1 : 0) << ','
           << r.run.batch_size << ',' << (r.run.fold ? std::to_string(*r.run.fold) : "") << ','
           << (r.classification.mean ? format_number(*r.classification.mean) : "") << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- experiments

void ExperimentGrid::validate() const {
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("experiment: lambda values must lie in [0, 1]");
    }
    for (std::size_t b : batch_sizes) {
        if (b < 2) throw std::invalid_argument("experiment: batch sizes must be at least 2");
    }
    if (folds == 2 || folds > 10) throw std::invalid_argument("experiment: folds must be 0, 1 or 3..10");
    if (lambdas.empty() && !without_contrastive && batch_sizes.empty()) {
        throw std::invalid_argument("experiment: the grid has no cells");
    }
}

namespace {

struct Cell {
    std::string label;
    double lambda;
    bool contrastive;
    std::size_t batch_size;
};

std::string lambda_label(double lambda) {
    std::ostringstream os;
    os.precision(2);
    os << std::fixed << lambda;
    return os.str();
}

MetricsReport run_cell(const Dataset& dataset, const Cell& cell, const ExperimentSettings& settings,
                       std::span<const std::size_t> train_idx, std::span<const std::size_t> test_idx,
                       std::optional<std::size_t> fold, bool localization) {
    LossConfig loss = settings.loss;
    loss.lambda = cell.lambda;
    OptimizerConfig opt = settings.optimizer;
    opt.batch_size = cell.batch_size;
    const Dataset train_set = dataset.subset(train_idx);
    const Dataset test_set = dataset.subset(test_idx);
    const Model init = Model::initialize(settings.encoder, derive_seed(settings.seed, 1));
    TrainOptions options;
    options.contrastive = cell.contrastive;
    TrainResult trained = train(train_set, init, loss, opt, settings.seed, options);

    MetricsReport report;
    report.run = {cell.label, settings.seed, cell.lambda,        loss.tau,      opt.batch_size,
                  opt.effective_negatives(), opt.epochs, cell.contrastive, fold};
    report.classification = evaluate_classification(trained.model, test_set);
    if (localization) {
        BoxPredictions predictions;
        for (const auto& [key, det] : localize(trained.model, test_set, settings.cam, settings.box)) {
            predictions.emplace(key, det.box);
        }
        report.localization = localization_table(predictions, test_set.boxes());
    }
    report.training = std::move(trained.epochs);
    return report;
}

}  // namespace

ExperimentReport run_experiments(const Dataset& dataset, const ExperimentGrid& grid,
                                 const ExperimentSettings& settings,
                                 const std::function<void(const MetricsReport&)>& on_report) {
    grid.validate();
    settings.loss.validate();
    settings.optimizer.validate();
    settings.encoder.validate();
    settings.box.validate();

    std::vector<Cell> cells;
    for (double l : grid.lambdas) cells.push_back({"lambda=" + lambda_label(l), l, true, settings.optimizer.batch_size});
    if (grid.without_contrastive) cells.push_back({"without_contrastive", 1.0, false, settings.optimizer.batch_size});
    for (std::size_t b : grid.batch_sizes) {
        cells.push_back({"batch_size=" + std::to_string(b), settings.loss.lambda, true, b});
    }

    ExperimentReport out;
    auto emit = [&](MetricsReport r) {
        if (on_report) on_report(r);
        out.reports.push_back(std::move(r));
    };
    if (grid.folds >= 3) {
        const auto folds = patient_folds(dataset, grid.folds, settings.seed);
        for (const Cell& cell : cells) {
            std::vector<ClassificationMetrics> per_fold;
            for (std::size_t f = 0; f < folds.size(); ++f) {
                std::vector<std::size_t> train_idx;
                for (std::size_t g = 0; g < folds.size(); ++g) {
                    if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
                }
                std::sort(train_idx.begin(), train_idx.end());
                MetricsReport r = run_cell(dataset, cell, settings, train_idx, folds[f], f, grid.localization);
                per_fold.push_back(r.classification);
                emit(std::move(r));
            }
            CrossValidationSummary s;
            s.label = cell.label;
            auto stats = [](const std::vector<double>& v, std::optional<double>& mean, std::optional<double>& sd) {
                if (v.empty()) return;
                const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
                double ss = 0.0;
                for (double x : v) ss += (x - m) * (x - m);
                mean = m;
                sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
            };
            for (std::size_t k = 0; k < kNumDiseases; ++k) {
                std::vector<double> v;
                for (const auto& m : per_fold) {
                    if (m.auc[k]) v.push_back(*m.auc[k]);
                }
                stats(v, s.mean[k], s.stddev[k]);
            }
            std::vector<double> means;
            for (const auto& m : per_fold) {
                if (m.mean) means.push_back(*m.mean);
            }
            stats(means, s.mean_auc, s.mean_auc_stddev);
            out.cross_validation.push_back(s);
        }
    } else {
        const SplitSet split = split_by_patient(dataset, settings.split, settings.seed);
        for (const Cell& cell : cells) emit(run_cell(dataset, cell, settings, split.train, split.test, std::nullopt, grid.localization));
    }

    // Best lambda among the contrastive lambda cells, by mean AUC (averaged over folds).
    std::optional<double> best_score;
    for (double l : grid.lambdas) {
        const std::string label = "lambda=" + lambda_label(l);
        double sum = 0.0;
        std::size_t n = 0;
        for (const MetricsReport& r : out.reports) {
            if (r.run.label == label && r.classification.mean) {
                sum += *r.classification.mean;
                ++n;
            }
        }
        if (n == 0) continue;
        const double score = sum / static_cast<double>(n);
        if (!best_score || score > *best_score) {
            best_score = score;
            out.best_lambda = l;
        }
    }
    return out;
}

}  // namespace scalp
