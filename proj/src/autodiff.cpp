#include "scalp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scalp/kernels.hpp"

namespace scalp {

const Tensor& Var::value() const {
    if (!tape_) throw std::logic_error("var: uninitialized handle");
    return tape_->value(id_);
}

Tensor Gradients::of(const Var& v) const {
    if (v.id() >= grads_.size() || grads_[v.id()].empty()) return Tensor(v.shape(), 0.0);
    return Tensor(shapes_[v.id()], grads_[v.id()]);
}

bool Gradients::has(const Var& v) const { return v.id() < grads_.size() && !grads_[v.id()].empty(); }

std::span<const double> Gradients::raw(const Var& v) const {
    if (!has(v)) return {};
    return grads_[v.id()];
}

const Tensor& BackwardContext::input(std::size_t i) const {
    return tape_->nodes_[tape_->nodes_[node_].inputs[i]].value;
}

const Tensor& BackwardContext::output() const { return tape_->nodes_[node_].value; }

Var Tape::input(Tensor tensor) {
    Node node;
    node.op = "input";
    node.requires_grad = tensor.requires_grad();
    node.value = std::move(tensor);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v, std::string_view op) const {
    if (&v.tape() != this) {
        throw std::logic_error(std::string(op) + ": operand recorded on a different tape");
    }
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardRule rule) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(rule));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardRule rule) {
    if (consumed_) throw std::logic_error(std::string(op) + ": tape already consumed");
    Node node;
    node.op = std::string(op);
    node.value = std::move(value);
    for (const Var& in : inputs) {
        check_owned(in, op);
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    node.rule = std::move(rule);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& output, const Tensor& seed) {
    std::pair<Var, Tensor> s{output, seed};
    return backward(std::span<const std::pair<Var, Tensor>>(&s, 1));
}

Gradients Tape::backward(const Var& output) {
    if (output.value().size() != 1) {
        throw ShapeError("backward: implicit seed needs a scalar output, got " +
                         shape_string(output.shape()));
    }
    return backward(output, Tensor(output.shape(), 1.0));
}

Gradients Tape::backward(std::span<const std::pair<Var, Tensor>> seeds) {
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    Gradients result;
    result.grads_.resize(nodes_.size());
    result.shapes_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) result.shapes_[i] = nodes_[i].value.shape();

    auto buffer = [&](std::size_t id) -> std::vector<double>& {
        auto& g = result.grads_[id];
        if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
        return g;
    };

    std::size_t last = 0;
    for (const auto& [out, seed] : seeds) {
        check_owned(out, "backward");
        if (seed.shape() != out.shape()) {
            throw ShapeError("backward: seed shape " + shape_string(seed.shape()) +
                             " does not match output shape " + shape_string(out.shape()));
        }
        auto& g = buffer(out.id());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
        last = std::max(last, out.id());
    }
    consumed_ = true;

    for (std::size_t id = last + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!node.rule || !node.requires_grad || result.grads_[id].empty()) continue;
        BackwardContext ctx;
        ctx.tape_ = this;
        ctx.node_ = id;
        ctx.grad_out_ = result.grads_[id];
        ctx.grad_in_.reserve(node.inputs.size());
        for (std::size_t in : node.inputs) {
            if (nodes_[in].requires_grad) {
                ctx.grad_in_.emplace_back(buffer(in));
            } else {
                ctx.grad_in_.emplace_back();
            }
        }
        node.rule(ctx);
    }
    return result;
}

BilinearTap bilinear_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    double src = (static_cast<double>(out_index) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    BilinearTap tap;
    tap.lo = std::min(static_cast<std::size_t>(src), in_size - 1);
    tap.hi = std::min(tap.lo + 1, in_size - 1);
    tap.frac = src - static_cast<double>(tap.lo);
    if (tap.lo == tap.hi) tap.frac = 0.0;
    return tap;
}

namespace ops {

namespace {

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

enum class Binary { add, sub, mul };

Var binary(std::string_view name, Binary kind, const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool same = av.shape() == bv.shape();
    if (!same && av.size() != 1 && bv.size() != 1) mismatch(name, av.shape(), bv.shape());
    const Shape out_shape = same ? av.shape() : (av.size() == 1 ? bv.shape() : av.shape());
    const std::size_t n = numel(out_shape);
    const std::size_t sa = av.size() == 1 && !same ? 0 : 1;
    const std::size_t sb = bv.size() == 1 && !same ? 0 : 1;
    Tensor out(out_shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av[i * sa];
        const double y = bv[i * sb];
        out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    return a.tape().record(name, std::move(out), {a, b}, [kind, sa, sb, n](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.input(1);
        if (ctx.needs(0)) {
            auto gx = ctx.grad_input(0);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i * sa] += kind == Binary::mul ? g[i] * y[i * sb] : g[i];
            }
        }
        if (ctx.needs(1)) {
            auto gy = ctx.grad_input(1);
            for (std::size_t i = 0; i < n; ++i) {
                gy[i * sb] += kind == Binary::mul ? g[i] * x[i * sa] : kind == Binary::sub ? -g[i] : g[i];
            }
        }
    });
}

template <class F, class D>
Var unary(std::string_view name, const Var& x, F f, D derivative) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return x.tape().record(name, std::move(out), {x}, [derivative](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        const Tensor& in = ctx.input(0);
        const Tensor& outv = ctx.output();
        auto gx = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(in[i], outv[i]);
    });
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != axis) out.push_back(shape[i]);
    }
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary("add", Binary::add, a, b); }
Var sub(const Var& a, const Var& b) { return binary("sub", Binary::sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary("mul", Binary::mul, a, b); }

Var affine(const Var& x, double scale, double shift) {
    return unary(
        "affine", x, [=](double v) { return scale * v + shift; }, [=](double, double) { return scale; });
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) mismatch("matmul", av.shape(), bv.shape());
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out(Shape{m, n});
    kernels::matmul<double>(m, k, n, av.data(), bv.data(), out.data());
    return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](const BackwardContext& ctx) {
        kernels::matmul_backward(m, k, n, ctx.input(0).data(), ctx.input(1).data(), ctx.grad_output(),
                                 ctx.grad_input(0), ctx.grad_input(1));
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0)) {
        mismatch("conv2d", xv.shape(), wv.shape());
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    kernels::Conv2dGeometry g;
    g.channels = xv.dim(0);
    g.height = xv.dim(1);
    g.width = xv.dim(2);
    g.out_channels = wv.dim(0);
    g.kernel_h = wv.dim(2);
    g.kernel_w = wv.dim(3);
    g.stride = stride;
    g.padding = padding;
    if (g.height + 2 * padding < g.kernel_h || g.width + 2 * padding < g.kernel_w) {
        mismatch("conv2d", xv.shape(), wv.shape());
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.value().shape() != Shape{g.out_channels}) {
        throw ShapeError("conv2d: bias shape " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(g.out_channels) + " output channels");
    }
    Tensor out(Shape{g.out_channels, g.out_height(), g.out_width()});
    kernels::conv2d_forward<double>(g, xv.data(), wv.data(),
                                    has_bias ? bias.value().data() : std::span<const double>{}, out.data());
    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return x.tape().record("conv2d", std::move(out), inputs, [g, has_bias](const BackwardContext& ctx) {
        kernels::conv2d_backward(g, ctx.input(0).data(), ctx.input(1).data(), ctx.grad_output(),
                                 ctx.grad_input(0), ctx.grad_input(1),
                                 has_bias ? ctx.grad_input(2) : std::span<double>{});
    });
}

Var relu(const Var& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
    return unary(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double s) { return s * (1.0 - s); });
}

Var exp(const Var& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double e) { return e; });
}

Var log(const Var& x) {
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var clamp(const Var& x, double lo, double hi) {
    return unary(
        "clamp", x, [=](double v) { return std::clamp(v, lo, hi); },
        [=](double v, double) { return v < lo || v > hi ? 0.0 : 1.0; });
}

Var mean(const Var& x, std::size_t axis) {
    const Tensor& xv = x.value();
    if (axis >= xv.rank()) throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for " + shape_string(xv.shape()));
    const AxisSplit s = split_axis(xv.shape(), axis);
    Tensor out(drop_axis(xv.shape(), axis));
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            double acc = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) acc += xv[(o * s.extent + e) * s.inner + i];
            out[o * s.inner + i] = acc * inv;
        }
    }
    return x.tape().record("mean", std::move(out), {x}, [s, inv](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        auto gx = ctx.grad_input(0);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t e = 0; e < s.extent; ++e) {
                for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i] * inv;
            }
        }
    });
}

Var max(const Var& x, std::size_t axis) {
    const Tensor& xv = x.value();
    if (axis >= xv.rank()) throw ShapeError("max: axis " + std::to_string(axis) + " out of range for " + shape_string(xv.shape()));
    const AxisSplit s = split_axis(xv.shape(), axis);
    Tensor out(drop_axis(xv.shape(), axis));
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = o * s.extent * s.inner + i;
            for (std::size_t e = 1; e < s.extent; ++e) {
                const std::size_t idx = (o * s.extent + e) * s.inner + i;
                if (xv[idx] > xv[best]) best = idx;
            }
            out[o * s.inner + i] = xv[best];
            argmax[o * s.inner + i] = best;
        }
    }
    return x.tape().record("max", std::move(out), {x}, [argmax = std::move(argmax)](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        auto gx = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
}

Var sum(const Var& x) {
    const Tensor& xv = x.value();
    double acc = 0.0;
    for (double v : xv.data()) acc += v;
    return x.tape().record("sum", Tensor::scalar(acc), {x}, [](const BackwardContext& ctx) {
        const double g = ctx.grad_output()[0];
        for (double& v : ctx.grad_input(0)) v += g;
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) mismatch("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) mismatch("concat", first, s);
        }
        out_shape[axis] += s[axis];
    }
    const AxisSplit total = split_axis(out_shape, axis);
    std::vector<std::size_t> extents;
    for (const Var& p : parts) extents.push_back(p.shape()[axis]);
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t o = 0; o < total.outer; ++o) {
            for (std::size_t e = 0; e < extents[k]; ++e) {
                for (std::size_t i = 0; i < total.inner; ++i) {
                    out[(o * total.extent + offset + e) * total.inner + i] = pv[(o * extents[k] + e) * total.inner + i];
                }
            }
        }
        offset += extents[k];
    }
    return parts.front().tape().record("concat", std::move(out), parts, [total, extents](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            if (ctx.needs(k)) {
                auto gp = ctx.grad_input(k);
                for (std::size_t o = 0; o < total.outer; ++o) {
                    for (std::size_t e = 0; e < extents[k]; ++e) {
                        for (std::size_t i = 0; i < total.inner; ++i) {
                            gp[(o * extents[k] + e) * total.inner + i] += g[(o * total.extent + offset + e) * total.inner + i];
                        }
                    }
                }
            }
            offset += extents[k];
        }
    });
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
    const Shape& in_shape = x.shape();
    const std::size_t rank = in_shape.size();
    std::vector<bool> seen(rank, false);
    bool ok = perm.size() == rank;
    for (std::size_t p : perm) {
        if (!ok || p >= rank || seen[p]) {
            ok = false;
            break;
        }
        seen[p] = true;
    }
    if (!ok) throw ShapeError("permute: invalid permutation for shape " + shape_string(in_shape));
    Shape out_shape(rank);
    for (std::size_t d = 0; d < rank; ++d) out_shape[d] = in_shape[perm[d]];
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in_shape[d];
    // source[i] is the input flat index feeding output flat index i
    const std::size_t n = numel(in_shape);
    std::vector<std::size_t> source(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[perm[d]];
        source[i] = src;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    const Tensor& xv = x.value();
    Tensor out(out_shape);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
    return x.tape().record("permute", std::move(out), {x}, [source = std::move(source)](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        auto gx = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape().record("reshape", std::move(out), {x}, [](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        auto gx = ctx.grad_input(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var select(const Var& x, std::size_t flat_index) {
    const Tensor& xv = x.value();
    if (flat_index >= xv.size()) {
        throw ShapeError("select: index " + std::to_string(flat_index) + " out of range for " + shape_string(xv.shape()));
    }
    return x.tape().record("select", Tensor::scalar(xv[flat_index]), {x}, [flat_index](const BackwardContext& ctx) {
        ctx.grad_input(0)[flat_index] += ctx.grad_output()[0];
    });
}

Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3 || out_h == 0 || out_w == 0) {
        throw ShapeError("upsample_bilinear: expected C x H x W input, got " + shape_string(xv.shape()));
    }
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    std::vector<BilinearTap> ty(out_h), tx(out_w);
    for (std::size_t i = 0; i < out_h; ++i) ty[i] = bilinear_tap(i, h, out_h);
    for (std::size_t j = 0; j < out_w; ++j) tx[j] = bilinear_tap(j, w, out_w);
    Tensor out(Shape{c, out_h, out_w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < out_h; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) {
                const auto& a = ty[i];
                const auto& b = tx[j];
                const double top = xv.at(ch, a.lo, b.lo) * (1.0 - b.frac) + xv.at(ch, a.lo, b.hi) * b.frac;
                const double bottom = xv.at(ch, a.hi, b.lo) * (1.0 - b.frac) + xv.at(ch, a.hi, b.hi) * b.frac;
                out.at(ch, i, j) = top * (1.0 - a.frac) + bottom * a.frac;
            }
        }
    }
    return x.tape().record("upsample_bilinear", std::move(out), {x}, [c, h, w, out_h, out_w, ty, tx](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        auto gx = ctx.grad_input(0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < out_h; ++i) {
                for (std::size_t j = 0; j < out_w; ++j) {
                    const double go = g[(ch * out_h + i) * out_w + j];
                    const auto& a = ty[i];
                    const auto& b = tx[j];
                    gx[(ch * h + a.lo) * w + b.lo] += go * (1.0 - a.frac) * (1.0 - b.frac);
                    gx[(ch * h + a.lo) * w + b.hi] += go * (1.0 - a.frac) * b.frac;
                    gx[(ch * h + a.hi) * w + b.lo] += go * a.frac * (1.0 - b.frac);
                    gx[(ch * h + a.hi) * w + b.hi] += go * a.frac * b.frac;
                }
            }
        }
    });
}

Var l2_normalize(const Var& x) {
    constexpr double kNormEps = 1e-12;
    const Tensor& xv = x.value();
    double sq = 0.0;
    for (double v : xv.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    const double denom = norm + kNormEps;
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / denom;
    return x.tape().record("l2_normalize", std::move(out), {x}, [norm, denom](const BackwardContext& ctx) {
        const auto g = ctx.grad_output();
        const Tensor& in = ctx.input(0);
        auto gx = ctx.grad_input(0);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * in[i];
        const double radial = norm > 0.0 ? dot / (denom * denom * norm) : 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / denom - in[i] * radial;
    });
}

Var gate(const Var& x, const Var& g) {
    const Tensor& xv = x.value();
    const Tensor& gv = g.value();
    if (xv.rank() != 3 || gv.rank() != 3 || gv.dim(0) != 1 || gv.dim(1) != xv.dim(1) || gv.dim(2) != xv.dim(2)) {
        mismatch("gate", xv.shape(), gv.shape());
    }
    const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
    Tensor out(xv.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = xv[ch * plane + p] * gv[p];
    }
    return x.tape().record("gate", std::move(out), {x, g}, [c, plane](const BackwardContext& ctx) {
        const auto go = ctx.grad_output();
        const Tensor& xin = ctx.input(0);
        const Tensor& gin = ctx.input(1);
        if (ctx.needs(0)) {
            auto gx = ctx.grad_input(0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t p = 0; p < plane; ++p) gx[ch * plane + p] += go[ch * plane + p] * gin[p];
            }
        }
        if (ctx.needs(1)) {
            auto gg = ctx.grad_input(1);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t p = 0; p < plane; ++p) gg[p] += go[ch * plane + p] * xin[ch * plane + p];
            }
        }
    });
}

}  // namespace ops

}  // namespace scalp
