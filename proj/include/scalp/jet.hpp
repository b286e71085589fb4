#pragma once

#include <array>
#include <cmath>

namespace scalp {

/// Truncated Taylor polynomial c0 + c1 t + c2 t^2 + c3 t^3.
///
/// Pushing a jet with c1 = 1 through a function evaluates its first three
/// derivatives along that direction exactly: f' = c1, f'' = 2 c2, f''' = 6 c3.
struct Jet {
    std::array<double, 4> c{};

    Jet() = default;
    Jet(double value) : c{value, 0.0, 0.0, 0.0} {}  // NOLINT: implicit lift of constants
    Jet(double c0, double c1, double c2, double c3) : c{c0, c1, c2, c3} {}

    static Jet variable(double value) { return Jet(value, 1.0, 0.0, 0.0); }

    double value() const { return c[0]; }
    double d1() const { return c[1]; }
    double d2() const { return 2.0 * c[2]; }
    double d3() const { return 6.0 * c[3]; }

    Jet& operator+=(const Jet& o) {
        for (int i = 0; i < 4; ++i) c[i] += o.c[i];
        return *this;
    }
    Jet& operator-=(const Jet& o) {
        for (int i = 0; i < 4; ++i) c[i] -= o.c[i];
        return *this;
    }
};

inline Jet operator+(Jet a, const Jet& b) { return a += b; }
inline Jet operator-(Jet a, const Jet& b) { return a -= b; }
inline Jet operator-(const Jet& a) { return Jet(-a.c[0], -a.c[1], -a.c[2], -a.c[3]); }

inline Jet operator*(const Jet& a, double s) { return Jet(a.c[0] * s, a.c[1] * s, a.c[2] * s, a.c[3] * s); }
inline Jet operator*(double s, const Jet& a) { return a * s; }

inline Jet operator*(const Jet& a, const Jet& b) {
    return Jet(a.c[0] * b.c[0],
               a.c[0] * b.c[1] + a.c[1] * b.c[0],
               a.c[0] * b.c[2] + a.c[1] * b.c[1] + a.c[2] * b.c[0],
               a.c[0] * b.c[3] + a.c[1] * b.c[2] + a.c[2] * b.c[1] + a.c[3] * b.c[0]);
}

inline Jet reciprocal(const Jet& b) {
    Jet r;
    r.c[0] = 1.0 / b.c[0];
    for (int k = 1; k < 4; ++k) {
        double acc = 0.0;
        for (int j = 1; j <= k; ++j) acc += b.c[j] * r.c[k - j];
        r.c[k] = -acc * r.c[0];
    }
    return r;
}

inline Jet operator/(const Jet& a, const Jet& b) { return a * reciprocal(b); }
inline Jet operator/(const Jet& a, double s) { return a * (1.0 / s); }

inline Jet exp(const Jet& a) {
    Jet e;
    e.c[0] = std::exp(a.c[0]);
    for (int k = 1; k < 4; ++k) {
        double acc = 0.0;
        for (int j = 1; j <= k; ++j) acc += j * a.c[j] * e.c[k - j];
        e.c[k] = acc / k;
    }
    return e;
}

inline Jet sigmoid(const Jet& a) { return reciprocal(Jet(1.0) + exp(-a)); }

/// Branch chosen on the value; the kink at 0 takes the zero branch.
inline Jet relu(const Jet& a) { return a.c[0] > 0.0 ? a : Jet(0.0); }

inline bool operator>(const Jet& a, const Jet& b) { return a.c[0] > b.c[0]; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace scalp
