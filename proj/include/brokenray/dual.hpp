#pragma once

#include <cmath>
#include <ostream>

namespace brokenray {

/// Forward-mode dual number a + b·ε with ε² = 0.
///
/// Carries one directional derivative. Seeding the derivative part of the
/// inputs with a direction v and evaluating f gives (f(z), ∇f(z)·v) in a single
/// pass, exact to roundoff.
struct Dual
{
    double v = 0.0;
    double d = 0.0;

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value) {}  // NOLINT: implicit from constants
    constexpr Dual(double value, double deriv) : v(value), d(deriv) {}

    Dual& operator+=(Dual o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(Dual o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(Dual o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(Dual o)
    {
        d = (d * o.v - v * o.d) / (o.v * o.v);
        v /= o.v;
        return *this;
    }
};

inline Dual operator+(Dual a, Dual b) { return a += b; }
inline Dual operator-(Dual a, Dual b) { return a -= b; }
inline Dual operator*(Dual a, Dual b) { return a *= b; }
inline Dual operator/(Dual a, Dual b) { return a /= b; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator+(Dual a) { return a; }

inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }

inline Dual sin(Dual a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -a.d * std::sin(a.v)}; }
inline Dual exp(Dual a)
{
    double e = std::exp(a.v);
    return {e, a.d * e};
}
inline Dual sqrt(Dual a)
{
    double r = std::sqrt(a.v);
    return {r, a.d / (2.0 * r)};
}
inline Dual abs(Dual a) { return a.v < 0 ? -a : a; }

// Real power. d/da a^b = b a^(b-1); d/db a^b = a^b ln a (only when a > 0).
inline Dual pow(Dual a, Dual b)
{
    double r = std::pow(a.v, b.v);
    double da = (b.v == 0.0) ? 0.0 : b.v * std::pow(a.v, b.v - 1.0);
    double db = (b.d != 0.0 && a.v > 0.0) ? r * std::log(a.v) : 0.0;
    return {r, a.d * da + b.d * db};
}

inline double value_of(double a) { return a; }
inline double value_of(Dual a) { return a.v; }
inline double deriv_of(double) { return 0.0; }
inline double deriv_of(Dual a) { return a.d; }

inline std::ostream& operator<<(std::ostream& os, Dual a)
{
    return os << a.v << "+" << a.d << "e";
}

}  // namespace brokenray
