#include "scalp/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace scalp {

void LossConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
    if (!(tau > 0.0)) throw std::invalid_argument("loss: tau must be positive, got " + std::to_string(tau));
    if (!(probability_clamp > 0.0 && probability_clamp < 0.5)) {
        throw std::invalid_argument("loss: probability clamp must lie in (0, 0.5)");
    }
}

double bce_class(double p, int y, double eps) {
    const double pc = std::clamp(p, eps, 1.0 - eps);
    return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

Var bce_total(const Var& probs, const Tensor& labels, double eps) {
    if (probs.shape() != labels.shape()) {
        throw ShapeError("bce_total: probabilities " + shape_string(probs.shape()) + " and labels " +
                         shape_string(labels.shape()) + " differ");
    }
    Tape& tape = probs.tape();
    Tensor complement(labels.shape());
    for (std::size_t i = 0; i < labels.size(); ++i) complement[i] = 1.0 - labels[i];
    const Var p = ops::clamp(probs, eps, 1.0 - eps);
    const Var pos = ops::mul(tape.constant(labels), ops::log(p));
    const Var neg = ops::mul(tape.constant(complement), ops::log(ops::affine(p, -1.0, 1.0)));
    return ops::affine(ops::sum(ops::add(pos, neg)), -1.0, 0.0);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: vectors differ in length");
    double dot = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw std::domain_error("cosine_similarity: zero vector");
    return dot / (std::sqrt(uu) * std::sqrt(vv));
}

Var cosine_similarity(const Var& u, const Var& v) {
    if (u.shape() != v.shape()) {
        throw ShapeError("cosine_similarity: shapes " + shape_string(u.shape()) + " and " + shape_string(v.shape()) +
                         " differ");
    }
    const Tensor& a = u.value();
    const Tensor& b = v.value();
    const double cos = cosine_similarity(a.data(), b.data());
    double aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    // d cos / da = b / (|a||b|) - cos a / |a|^2, and symmetrically for b.
    return u.tape().record("cosine", Tensor::scalar(cos), {u, v}, [cos, na, nb](const BackwardContext& ctx) {
        const double g = ctx.grad_output()[0];
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.input(1);
        if (ctx.needs(0)) {
            auto gx = ctx.grad_input(0);
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * (y[i] / (na * nb) - cos * x[i] / (na * na));
        }
        if (ctx.needs(1)) {
            auto gy = ctx.grad_input(1);
            for (std::size_t i = 0; i < y.size(); ++i) gy[i] += g * (x[i] / (na * nb) - cos * y[i] / (nb * nb));
        }
    });
}

Var contrastive_pair_loss(const Var& query, const Var& positive, const std::vector<Var>& negatives,
                          const LossConfig& config) {
    if (negatives.empty()) throw std::invalid_argument("contrastive_pair_loss: at least one negative key is required");
    if (!(config.tau > 0.0)) throw std::invalid_argument("contrastive_pair_loss: tau must be positive");
    const double inv_tau = 1.0 / config.tau;
    const Var s_pos = ops::affine(cosine_similarity(query, positive), inv_tau, 0.0);
    std::vector<Var> logits;
    if (config.include_positive_in_denominator) logits.push_back(ops::reshape(s_pos, Shape{1}));
    for (const Var& n : negatives) {
        logits.push_back(ops::reshape(ops::affine(cosine_similarity(query, n), inv_tau, 0.0), Shape{1}));
    }
    const Var log_z = ops::log(ops::sum(ops::exp(ops::concat(logits, 0))));
    return ops::sub(log_z, s_pos);
}

Var contrastive_total(const std::vector<EntryEmbeddings>& entries, const LossConfig& config) {
    if (entries.empty()) throw std::invalid_argument("contrastive_total: empty batch");
    Var total;
    for (const EntryEmbeddings& e : entries) {
        const Var l = contrastive_pair_loss(e.query, e.positive, e.negatives, config);
        total = total.valid() ? ops::add(total, l) : l;
    }
    return total;
}

double total_loss(double ce, double con, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("total_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
    return lambda * ce + (1.0 - lambda) * con;
}

Var total_loss(const Var& ce, const Var& con, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("total_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
    return ops::add(ops::affine(ce, lambda, 0.0), ops::affine(con, 1.0 - lambda, 0.0));
}

}  // namespace scalp
