#pragma once

#include <cmath>
#include <string>

#include "brokenray/brokenray.hpp"

namespace testing_support {

using namespace brokenray;

inline std::string scenario_path(std::string const& name)
{
    return std::string(BROKENRAY_SCENARIO_DIR) + "/" + name + ".yaml";
}

//! k = l = 1, A = 1, C = 0 and the given B(x1).
inline Chart curved_chart(std::string const& b, double x_max, std::string const& name = "curved")
{
    Domain d;
    d.x_max = Vec::Constant(1, x_max);
    d.y_min = Vec::Constant(1, -100.0);
    d.y_max = Vec::Constant(1, 100.0);
    d.t_min = -100.0;
    d.t_max = 100.0;
    auto vars = Chart::variable_names(1, 1);
    MetricCoeffs mc;
    mc.A = {Expression(1.0)};
    mc.B = {Expression::parse(b, vars)};
    mc.C = {Expression(0.0)};
    return Chart(name, 1, 1, d, mc);
}

inline Chart disc_chart() { return curved_chart("1/(1-x1)^2", 0.95, "disc"); }

//! Flat chart on [0, x_max]^k × [−100, 100]^l with optional upper walls.
inline Chart flat_chart(int k, int l, double x_max, bool upper = false)
{
    Domain d;
    d.x_max = Vec::Constant(k, x_max);
    d.y_min = Vec::Constant(l, -100.0);
    d.y_max = Vec::Constant(l, 100.0);
    d.t_min = -100.0;
    d.t_max = 100.0;
    return Chart::flat("flat", k, l, d, std::vector<bool>(static_cast<std::size_t>(k), upper));
}

inline CotangentPoint point(Vec x, Vec y, double t, Vec xi, Vec zeta, double tau = 1.0)
{
    CotangentPoint q;
    q.x = std::move(x);
    q.y = std::move(y);
    q.t = t;
    q.xi = std::move(xi);
    q.zeta = std::move(zeta);
    q.tau = tau;
    return q;
}

inline Vec v1(double a) { return Vec::Constant(1, a); }
inline Vec v2(double a, double b) { return Vec{{a, b}}; }
inline Vec v0() { return Vec(0); }

//! Disc chord from the rim with impact parameter b, moving inward.
inline CotangentPoint disc_chord(double b) { return point(v1(0.0), v1(0.0), 0.0, v1(-std::sqrt(1 - b * b)), v1(b)); }

inline CompressedPoint boundary_point(double zeta, double tau = 1.0)
{
    CompressedPoint c;
    c.face.add_lower(0);
    c.x_free = v0();
    c.xi_free = v0();
    c.y = v1(0.0);
    c.zeta = v1(zeta);
    c.t = 0.0;
    c.tau = tau;
    return c;
}

}  // namespace testing_support
