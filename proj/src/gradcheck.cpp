#include "scalp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace scalp {

namespace {

void check_epsilon(double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
        throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-3], got " + std::to_string(epsilon));
    }
}

}  // namespace

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& value,
                           std::span<const double> analytic, std::span<const double> point, double epsilon) {
    check_epsilon(epsilon);
    if (analytic.size() != point.size()) {
        throw ShapeError("grad_check: gradient has " + std::to_string(analytic.size()) + " entries, point has " +
                         std::to_string(point.size()));
    }
    std::vector<double> x(point.begin(), point.end());
    GradCheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + epsilon;
        const double plus = value(x);
        x[i] = saved - epsilon;
        const double minus = value(x);
        x[i] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            throw std::domain_error("grad_check: non-finite loss when perturbing coordinate " + std::to_string(i));
        }
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        if (err > report.max_error) {
            report.max_error = err;
            report.worst_index = i;
        }
    }
    return report;
}

GradCheckReport grad_check(const TapeFunction& f, const Tensor& point, double epsilon) {
    check_epsilon(epsilon);
    Tape tape;
    const Var x = tape.leaf(point);
    const Var y = f(tape, x);
    if (y.value().size() != 1) {
        throw ShapeError("grad_check: function must be scalar-valued, got " + shape_string(y.shape()));
    }
    const Gradients grads = tape.backward(y);
    const Tensor analytic = grads.of(x);
    auto value = [&](std::span<const double> coords) {
        Tape t;
        const Var v = t.constant(Tensor(point.shape(), std::vector<double>(coords.begin(), coords.end())));
        return f(t, v).value().item();
    };
    return grad_check(value, analytic.data(), point.data(), epsilon);
}

}  // namespace scalp
