#pragma once

#include <span>
#include <vector>

#include "scalp/autodiff.hpp"

namespace scalp {

struct LossConfig {
    double lambda = 0.80;  ///< weight of the classification term
    double tau = 0.5;      ///< contrastive temperature
    /// When false the softmax denominator holds the negatives only, exactly as
    /// the printed loss; that form is unbounded below.
    bool include_positive_in_denominator = true;
    double probability_clamp = 1e-7;

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

/// -y log p - (1 - y) log(1 - p), with p clamped to [eps, 1 - eps].
double bce_class(double p, int y, double eps = 1e-7);

/// Sum over rows and classes of bce_class. `probs` and `labels` are N x K.
Var bce_total(const Var& probs, const Tensor& labels, double eps = 1e-7);

/// u.v / (|u| |v|); throws std::domain_error for a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
Var cosine_similarity(const Var& u, const Var& v);

/// -log(exp(s+) / Z) with s = cos / tau. Z sums the negatives' exponentials
/// plus exp(s+) when the config includes the positive in the denominator.
Var contrastive_pair_loss(const Var& query, const Var& positive, const std::vector<Var>& negatives,
                          const LossConfig& config);

struct EntryEmbeddings {
    Var query;
    Var positive;
    std::vector<Var> negatives;
};

/// Sum of contrastive_pair_loss over the batch entries.
Var contrastive_total(const std::vector<EntryEmbeddings>& entries, const LossConfig& config);

/// lambda * ce + (1 - lambda) * con.
double total_loss(double ce, double con, double lambda);
Var total_loss(const Var& ce, const Var& con, double lambda);

}  // namespace scalp
