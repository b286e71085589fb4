#include <doctest.h>

#include <cmath>
#include <sstream>

#include "scalp/autodiff.hpp"
#include "scalp/gradcheck.hpp"
#include "scalp/jet.hpp"
#include "scalp/kernels.hpp"
#include "primitives.hpp"
#include "support.hpp"

using namespace scalp;
using scalp::testing::away_from_zero;
using scalp::testing::random_tensor;
using scalp::testing::PrimitiveCase;
using scalp::testing::primitive_cases;
using scalp::testing::worst_primitive_error;

TEST_CASE("tensor construction and serialization") {
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.at(1, 2) == 6);
    CHECK_THROWS_AS(t.reshaped(Shape{4}), ShapeError);
    std::stringstream ss;
    write_tensor(ss, t);
    CHECK(read_tensor(ss) == t);
}

TEST_CASE("forward examples") {
    Tape tape;
    SUBCASE("identity 1x1 conv returns the input") {
        Rng rng(1);
        const Tensor x = random_tensor(rng, Shape{1, 5, 4});
        const Var y = ops::conv2d(tape.constant(x), tape.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), Var(), 1, 0);
        CHECK(y.value() == x);
    }
    SUBCASE("relu") {
        const Var y = ops::relu(tape.constant(Tensor(Shape{3}, std::vector<double>{-1, 0, 2})));
        CHECK(y.value() == Tensor(Shape{3}, std::vector<double>{0, 0, 2}));
    }
    SUBCASE("identity matmul") {
        Tensor eye(Shape{3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
        Rng rng(2);
        const Tensor a = random_tensor(rng, Shape{3, 4});
        CHECK(ops::matmul(tape.constant(eye), tape.constant(a)).value() == a);
    }
    SUBCASE("shape errors name the primitive") {
        const Var a = tape.constant(Tensor(Shape{2, 3}));
        const Var b = tape.constant(Tensor(Shape{4, 5}));
        CHECK_THROWS_WITH_AS(ops::matmul(a, b), "matmul: incompatible shapes [2 3] and [4 5]", ShapeError);
    }
}

TEST_CASE("backward examples") {
    SUBCASE("x*x at 3") {
        Tape tape;
        const Var x = tape.leaf(Tensor::scalar(3.0));
        CHECK(tape.backward(ops::mul(x, x)).of(x).item() == doctest::Approx(6.0));
    }
    SUBCASE("sum gives ones") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{4}, std::vector<double>{1, -2, 3, 4}));
        CHECK(tape.backward(ops::sum(x)).of(x) == Tensor(Shape{4}, 1.0));
    }
    SUBCASE("sigmoid at 0") {
        Tape tape;
        const Var x = tape.leaf(Tensor::scalar(0.0));
        CHECK(tape.backward(ops::sigmoid(x)).of(x).item() == 0.25);
    }
    SUBCASE("a consumed tape refuses a second pass") {
        Tape tape;
        const Var x = tape.leaf(Tensor::scalar(1.0));
        const Var y = ops::exp(x);
        tape.backward(y);
        CHECK_THROWS_WITH(tape.backward(y), "backward: tape already consumed");
    }
    SUBCASE("seed shape must match") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{2}));
        CHECK_THROWS_AS(tape.backward(ops::relu(x), Tensor(Shape{3})), ShapeError);
    }
    SUBCASE("max routes ties to the first maximum") {
        Tape tape;
        const Var x = tape.leaf(Tensor(Shape{3}, std::vector<double>{2, 5, 5}));
        CHECK(tape.backward(ops::max(x, 0)).of(x) == Tensor(Shape{3}, std::vector<double>{0, 1, 0}));
    }
    SUBCASE("constants receive no gradient") {
        Tape tape;
        const Var c = tape.constant(Tensor::scalar(2.0));
        const Var x = tape.leaf(Tensor::scalar(3.0));
        const Gradients g = tape.backward(ops::mul(c, x));
        CHECK_FALSE(g.has(c));
        CHECK(g.of(x).item() == 2.0);
    }
}

TEST_CASE("backward of a sum of graphs is the sum of backward results") {
    Rng rng(3);
    const Tensor point = random_tensor(rng, Shape{6});
    auto f = [](const Var& x) { return ops::sum(ops::mul(ops::sigmoid(x), x)); };
    auto g = [](const Var& x) { return ops::sum(ops::exp(ops::affine(x, 0.5, 0.1))); };
    Tape t1, t2, t3;
    const Var x1 = t1.leaf(point), x2 = t2.leaf(point), x3 = t3.leaf(point);
    const Tensor gf = t1.backward(f(x1)).of(x1);
    const Tensor gg = t2.backward(g(x2)).of(x2);
    const Tensor gs = t3.backward(ops::add(f(x3), g(x3))).of(x3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(gs[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-14));
}

TEST_CASE("multi-seed backward adds contributions") {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{2}, std::vector<double>{1.0, 2.0}));
    const Var a = ops::affine(x, 2.0, 0.0);
    const Var b = ops::mul(x, x);
    const std::vector<std::pair<Var, Tensor>> seeds{{a, Tensor(Shape{2}, 1.0)}, {b, Tensor(Shape{2}, 0.5)}};
    const Tensor g = tape.backward(seeds).of(x);
    CHECK(g[0] == 2.0 + 1.0);
    CHECK(g[1] == 2.0 + 2.0);
}

TEST_CASE("permute then inverse is the identity on data and gradients") {
    Rng rng(4);
    const Tensor x = random_tensor(rng, Shape{2, 3, 4});
    const std::vector<std::size_t> perm{2, 0, 1}, inverse{1, 2, 0};
    Tape tape;
    const Var v = tape.leaf(x);
    const Var round_trip = ops::permute(ops::permute(v, perm), inverse);
    CHECK(round_trip.value() == x);
    const Tensor seed = random_tensor(rng, Shape{2, 3, 4});
    CHECK(tape.backward(round_trip, seed).of(v) == seed);
}

TEST_CASE("grad_check examples and errors") {
    const TapeFunction square = [](Tape&, const Var& x) { return ops::sum(ops::mul(x, x)); };
    CHECK(grad_check(square, Tensor::scalar(3.0), 1e-5).max_error < 1e-8);
    CHECK_THROWS_AS(grad_check(square, Tensor::scalar(3.0), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(square, Tensor::scalar(3.0), 1e-2), std::invalid_argument);
    const TapeFunction bad_log = [](Tape&, const Var& x) { return ops::sum(ops::log(x)); };
    CHECK_THROWS_AS(grad_check(bad_log, Tensor(Shape{2}, std::vector<double>{1.0, 0.0}), 1e-5), std::domain_error);
}

TEST_CASE("every primitive passes a gradient check at 100 random points") {
    for (const PrimitiveCase& pc : primitive_cases()) {
        CAPTURE(pc.name);
        CHECK(worst_primitive_error(pc, 100) < 1e-6);
    }
}

TEST_CASE("bilinear taps clamp at the border") {
    const BilinearTap t0 = bilinear_tap(0, 4, 8);
    CHECK(t0.lo == 0);
    CHECK(t0.frac == 0.0);
    const BilinearTap t1 = bilinear_tap(1, 4, 8);  // source (1 + 0.5) * 0.5 - 0.5 = 0.25
    CHECK(t1.lo == 0);
    CHECK(t1.hi == 1);
    CHECK(t1.frac == doctest::Approx(0.25));
    const BilinearTap last = bilinear_tap(7, 4, 8);  // source 3.25 clamps to the last pixel
    CHECK(last.lo == 3);
    CHECK(last.hi == 3);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
    Rng rng(21);
    kernels::Conv2dGeometry g{6, 20, 18, 7, 3, 3, 1, 1};
    REQUIRE(g.macs() >= kernels::kParallelThreshold);
    std::vector<double> x(g.input_size()), w(g.weight_size()), b(g.out_channels), gy(g.output_size());
    for (auto* v : {&x, &w, &b, &gy}) {
        for (double& e : *v) e = rng.normal();
    }
    std::vector<double> y_ref(g.output_size()), y_par(g.output_size());
    kernels::reference::conv2d_forward(g, x, w, b, y_ref);
    kernels::conv2d_forward<double>(g, x, w, b, y_par);
    CHECK(y_ref == y_par);

    std::vector<double> gx_ref(g.input_size()), gw_ref(g.weight_size()), gb_ref(g.out_channels);
    std::vector<double> gx_par = gx_ref, gw_par = gw_ref, gb_par = gb_ref;
    kernels::reference::conv2d_backward(g, x, w, gy, gx_ref, gw_ref, gb_ref);
    kernels::conv2d_backward(g, x, w, gy, gx_par, gw_par, gb_par);
    CHECK(gx_ref == gx_par);
    CHECK(gw_ref == gw_par);
    CHECK(gb_ref == gb_par);

    const std::size_t m = 40, k = 33, n = 37;
    std::vector<double> a(m * k), bm(k * n), go(m * n);
    for (auto* v : {&a, &bm, &go}) {
        for (double& e : *v) e = rng.normal();
    }
    std::vector<double> o_ref(m * n), o_par(m * n);
    kernels::reference::matmul(m, k, n, a, bm, o_ref);
    kernels::matmul<double>(m, k, n, a, bm, o_par);
    CHECK(o_ref == o_par);
    std::vector<double> ga_ref(m * k), gb2_ref(k * n), ga_par(m * k), gb2_par(k * n);
    kernels::reference::matmul_backward(m, k, n, a, bm, go, ga_ref, gb2_ref);
    kernels::matmul_backward(m, k, n, a, bm, go, ga_par, gb2_par);
    CHECK(ga_ref == ga_par);
    CHECK(gb2_ref == gb2_par);
}

TEST_CASE("conv2d agrees with a direct loop") {
    // Independent formulation: gather every output from its receptive field.
    Rng rng(22);
    const std::size_t C = 2, H = 5, W = 7, O = 3, K = 3, S = 2, P = 1;
    const Tensor x = random_tensor(rng, {C, H, W}), w = random_tensor(rng, {O, C, K, K}), b = random_tensor(rng, {O});
    Tape tape;
    const Tensor y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), S, P).value();
    const std::size_t oh = (H + 2 * P - K) / S + 1, ow = (W + 2 * P - K) / S + 1;
    REQUIRE(y.shape() == Shape{O, oh, ow});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = b[o];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ky = 0; ky < K; ++ky)
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const long yy = static_cast<long>(i * S + ky) - static_cast<long>(P);
                            const long xx = static_cast<long>(j * S + kx) - static_cast<long>(P);
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                            acc += x.at(c, yy, xx) * w[((o * C + c) * K + ky) * K + kx];
                        }
                CHECK(y.at(o, i, j) == doctest::Approx(acc).epsilon(1e-14));
            }
}

TEST_CASE("jets carry exact higher derivatives") {
    const double x0 = 0.3;
    const Jet x = Jet::variable(x0);
    SUBCASE("polynomial") {
        const Jet y = x * x * x;  // y' = 3x^2, y'' = 6x, y''' = 6
        CHECK(y.value() == doctest::Approx(x0 * x0 * x0));
        CHECK(y.d1() == doctest::Approx(3 * x0 * x0));
        CHECK(y.d2() == doctest::Approx(6 * x0));
        CHECK(y.d3() == doctest::Approx(6.0));
    }
    SUBCASE("exp") {
        const Jet y = exp(x * 2.0);
        const double e = std::exp(2 * x0);
        CHECK(y.d1() == doctest::Approx(2 * e));
        CHECK(y.d2() == doctest::Approx(4 * e));
        CHECK(y.d3() == doctest::Approx(8 * e));
    }
    SUBCASE("sigmoid") {
        const double s = 1.0 / (1.0 + std::exp(-x0));
        const double d1 = s * (1 - s);
        const double d2 = d1 * (1 - 2 * s);
        const double d3 = d1 * (1 - 6 * s + 6 * s * s);
        const Jet y = sigmoid(x);
        CHECK(y.d1() == doctest::Approx(d1));
        CHECK(y.d2() == doctest::Approx(d2));
        CHECK(y.d3() == doctest::Approx(d3));
    }
    SUBCASE("quotient") {
        const Jet y = Jet(1.0) / (x + 1.0);  // (1+x)^-1: -1, 2, -6 times powers
        const double u = 1.0 + x0;
        CHECK(y.d1() == doctest::Approx(-1 / (u * u)));
        CHECK(y.d2() == doctest::Approx(2 / (u * u * u)));
        CHECK(y.d3() == doctest::Approx(-6 / (u * u * u * u)));
    }
}
