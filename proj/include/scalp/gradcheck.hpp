#pragma once

#include <functional>
#include <span>

#include "scalp/autodiff.hpp"

namespace scalp {

struct GradCheckReport {
    double max_error = 0.0;    ///< max |analytic - numeric| / max(1, |analytic|)
    std::size_t worst_index = 0;
};

/// Scalar function of one tensor, built on the given tape.
using TapeFunction = std::function<Var(Tape&, const Var&)>;

/// Compares backward() against central finite differences coordinate by
/// coordinate. Throws std::invalid_argument for epsilon outside (0, 1e-3] and
/// std::domain_error naming the coordinate when a perturbed loss is non-finite.
GradCheckReport grad_check(const TapeFunction& f, const Tensor& point, double epsilon = 1e-5);

/// Variant for losses that are not a single tape: `value` evaluates the loss
/// at a flat parameter vector and `analytic` is the gradient under test.
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& value,
                           std::span<const double> analytic, std::span<const double> point,
                           double epsilon = 1e-5);

}  // namespace scalp
