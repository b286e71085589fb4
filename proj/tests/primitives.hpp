#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "scalp/autodiff.hpp"
#include "scalp/gradcheck.hpp"
#include "scalp/objective.hpp"
#include "support.hpp"

namespace scalp::testing {

// Each primitive as a scalar function of one tensor; the rest of its inputs
// are fixed random constants.
struct PrimitiveCase {
    const char* name;
    Shape shape;
    std::function<Var(Tape&, const Var&, Rng&)> build;
    bool away_from_kinks = false;
};

inline Var weighted_sum(Tape& tape, const Var& y, Rng& rng) {
    return ops::sum(ops::mul(y, tape.constant(random_tensor(rng, y.shape()))));
}

inline std::vector<PrimitiveCase> primitive_cases() {
    return {
        {"add", {3, 2}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::add(x, t.constant(random_tensor(r, {3, 2}))), r); }},
        {"add_scalar", {3}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::add(x, t.constant(Tensor::scalar(0.3))), r); }},
        {"sub", {4}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::sub(t.constant(random_tensor(r, {4})), x), r); }},
        {"mul", {2, 3}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::mul(x, x), r); }},
        {"mul_scalar", {1}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::mul(t.constant(random_tensor(r, {3})), x), r); }},
        {"affine", {5}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::affine(x, -1.7, 0.2), r); }},
        {"matmul_left", {2, 3}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::matmul(x, t.constant(random_tensor(r, {3, 4}))), r); }},
        {"matmul_right", {3, 4}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::matmul(t.constant(random_tensor(r, {2, 3})), x), r); }},
        {"conv2d_input", {2, 5, 6}, [](Tape& t, const Var& x, Rng& r) {
             return weighted_sum(t, ops::conv2d(x, t.constant(random_tensor(r, {3, 2, 3, 3})), t.constant(random_tensor(r, {3})), 2, 1), r);
         }},
        {"conv2d_weight", {3, 2, 3, 3}, [](Tape& t, const Var& w, Rng& r) {
             return weighted_sum(t, ops::conv2d(t.constant(random_tensor(r, {2, 5, 6})), w, Var(), 1, 1), r);
         }},
        {"conv2d_bias", {3}, [](Tape& t, const Var& b, Rng& r) {
             return weighted_sum(t, ops::conv2d(t.constant(random_tensor(r, {2, 4, 4})), t.constant(random_tensor(r, {3, 2, 2, 2})), b, 2, 0), r);
         }},
        {"relu", {6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::relu(x), r); }, true},
        {"sigmoid", {6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::sigmoid(x), r); }},
        {"exp", {6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::exp(x), r); }},
        {"log", {6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::log(ops::affine(x, 1.0, 2.0)), r); }},
        {"clamp", {6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::clamp(x, -0.5, 0.5), r); }, true},
        {"mean", {3, 4, 2}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::mean(x, 1), r); }},
        {"max", {3, 4, 2}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::max(x, 0), r); }},
        {"sum", {3, 3}, [](Tape&, const Var& x, Rng&) { return ops::sum(ops::mul(x, x)); }},
        {"concat", {2, 3}, [](Tape& t, const Var& x, Rng& r) {
             return weighted_sum(t, ops::concat({x, t.constant(random_tensor(r, {1, 3})), x}, 0), r);
         }},
        {"permute", {2, 3, 4}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::permute(x, {1, 2, 0}), r); }},
        {"reshape", {2, 6}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::reshape(x, {3, 4}), r); }},
        {"select", {5}, [](Tape&, const Var& x, Rng&) { return ops::mul(ops::select(x, 3), ops::select(x, 1)); }},
        {"upsample_bilinear", {2, 3, 4}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::upsample_bilinear(x, 7, 9), r); }},
        {"l2_normalize", {7}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::l2_normalize(x), r); }},
        {"gate_input", {3, 2, 4}, [](Tape& t, const Var& x, Rng& r) { return weighted_sum(t, ops::gate(x, t.constant(random_tensor(r, {1, 2, 4}))), r); }},
        {"cosine", {6}, [](Tape& t, const Var& x, Rng& r) {
             return ops::mul(cosine_similarity(x, t.constant(random_tensor(r, {6}))), cosine_similarity(t.constant(random_tensor(r, {6})), x));
         }},
        {"gate_mask", {1, 2, 4}, [](Tape& t, const Var& g, Rng& r) { return weighted_sum(t, ops::gate(t.constant(random_tensor(r, {3, 2, 4})), g), r); }},
    };
}


/// Worst grad_check error of one primitive over `trials` seeded points.
inline double worst_primitive_error(const PrimitiveCase& pc, std::uint64_t trials) {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < trials; ++trial) {
        Rng point_rng(derive_seed(11, trial));
        const Tensor point = pc.away_from_kinks ? away_from_zero(point_rng, pc.shape, 0.05)
                                                : random_tensor(point_rng, pc.shape);
        const std::uint64_t const_seed = derive_seed(12, trial);
        const TapeFunction f = [&](Tape& tape, const Var& x) {
            Rng rng(const_seed);
            return pc.build(tape, x, rng);
        };
        worst = std::max(worst, grad_check(f, point, 1e-5).max_error);
    }
    return worst;
}

}  // namespace scalp::testing
