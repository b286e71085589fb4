#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scalp/tensor.hpp"

namespace scalp {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradients produced by one backward pass, keyed by tape node.
class Gradients {
public:
    /// Gradient of `v`; zeros when nothing flowed into it.
    Tensor of(const Var& v) const;
    bool has(const Var& v) const;
    std::span<const double> raw(const Var& v) const;

private:
    friend class Tape;
    std::vector<std::vector<double>> grads_;
    std::vector<Shape> shapes_;
};

/// What a primitive's backward rule sees.
class BackwardContext {
public:
    const Tensor& input(std::size_t i) const;
    const Tensor& output() const;
    std::span<const double> grad_output() const { return grad_out_; }
    /// Empty when input `i` does not require a gradient.
    std::span<double> grad_input(std::size_t i) const { return grad_in_[i]; }
    bool needs(std::size_t i) const { return !grad_in_[i].empty(); }

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::size_t node_ = 0;
    std::span<const double> grad_out_;
    std::vector<std::span<double>> grad_in_;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

/// Records primitive applications in execution order and replays them in
/// reverse to accumulate gradients. A tape is single-threaded; distinct tapes
/// are independent and may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers an input; it receives a gradient when `tensor.requires_grad()`.
    Var input(Tensor tensor);
    Var leaf(Tensor tensor) { return input(std::move(tensor.set_requires_grad(true))); }
    Var constant(Tensor tensor) { return input(std::move(tensor.set_requires_grad(false))); }

    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardRule rule);
    Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardRule rule);

    /// Reverse pass from `output` seeded with `seed`. A tape can be consumed once.
    Gradients backward(const Var& output, const Tensor& seed);
    /// Scalar output, seed 1.
    Gradients backward(const Var& output);
    /// Several outputs seeded at once; contributions add.
    Gradients backward(std::span<const std::pair<Var, Tensor>> seeds);

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::string_view op(std::size_t id) const { return nodes_[id].op; }

private:
    friend class BackwardContext;

    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        bool requires_grad = false;
    };

    void check_owned(const Var& v, std::string_view op) const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Primitives. Shape errors throw ShapeError naming the primitive and shapes.
namespace ops {

/// Elementwise; either operand may hold a single value (scalar broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// a * x + b with constants a, b.
Var affine(const Var& x, double scale, double shift);
Var matmul(const Var& a, const Var& b);
/// x: C x H x W, weight: O x C x kh x kw, bias: O (may be invalid Var for none).
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
/// Passes values inside [lo, hi] unchanged; gradient is zero where clipped.
Var clamp(const Var& x, double lo, double hi);
/// Reductions drop the reduced axis. Ties in max route the gradient to the first maximum.
Var mean(const Var& x, std::size_t axis);
Var max(const Var& x, std::size_t axis);
Var sum(const Var& x);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
Var reshape(const Var& x, Shape shape);
/// Single element at a flat index, as a scalar.
Var select(const Var& x, std::size_t flat_index);
/// C x H x W -> C x out_h x out_w, align-corners-false sampling.
Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);
/// x / (||x||_2 + 1e-12) over all elements.
Var l2_normalize(const Var& x);
/// x (C x H x W) times gate (1 x H x W) broadcast along the leading axis.
Var gate(const Var& x, const Var& g);

}  // namespace ops

/// Bilinear source coordinate used by upsample_bilinear (exposed for tests).
struct BilinearTap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0;
};
BilinearTap bilinear_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size);

}  // namespace scalp
