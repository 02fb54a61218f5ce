#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "boundary.hpp"
#include "dual.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "hamiltonian.hpp"
#include "ray.hpp"
#include "tracer.hpp"

namespace brokenray {

struct PropertyReport
{
    std::string name;
    bool pass = false;
    double statistic = 0.0;
    int ray_id = 0;
    double s = 0.0;  //!< location of the worst case
    double tolerance = 0.0;
    //! extra key=value pairs, in insertion order
    std::vector<std::pair<std::string, double>> details;

    void finish() { pass = statistic <= tolerance; }
};

//---------------------------------------------------------------------------//
// π-invariant test functions
//---------------------------------------------------------------------------//
//! Named scalar function on flat states, evaluable on Dual for H_p pairings.
struct PiFunction
{
    std::string name;
    std::function<Dual(std::span<Dual const>)> f;

    double operator()(Vec const& z) const
    {
        std::vector<Dual> zd(static_cast<std::size_t>(z.size()));
        for (int i = 0; i < z.size(); ++i)
            zd[static_cast<std::size_t>(i)] = Dual(z[i]);
        return f(std::span<Dual const>(zd)).v;
    }
};

/*!
 * π-invariant coordinate by name: "t", "tau", "eta", "x<j>", "y<i>",
 * "zeta<i>" (1-based indices).
 */
inline PiFunction pi_function(PhaseLayout const& L, std::string const& name)
{
    auto index = [&](std::string const& prefix, int bound) {
        int i = 0;
        try
        {
            i = std::stoi(name.substr(prefix.size()));
        }
        catch (std::exception const&)
        {
            i = 0;
        }
        if (i < 1 || i > bound)
            throw Error(ErrorCode::InvalidArgument, "coordinate index out of range in '" + name + "'");
        return i - 1;
    };
    if (name == "t")
        return {name, [L](std::span<Dual const> z) { return z[static_cast<std::size_t>(L.t())]; }};
    if (name == "tau")
        return {name, [L](std::span<Dual const> z) { return z[static_cast<std::size_t>(L.tau())]; }};
    if (name == "eta")
        return {name, [L](std::span<Dual const> z) { return eta<Dual>(L, z); }};
    if (name.rfind("zeta", 0) == 0)
    {
        int i = index("zeta", L.l);
        return {name, [L, i](std::span<Dual const> z) { return z[static_cast<std::size_t>(L.zeta(i))]; }};
    }
    if (name.rfind("x", 0) == 0)
    {
        int j = index("x", L.k);
        return {name, [L, j](std::span<Dual const> z) { return z[static_cast<std::size_t>(L.x(j))]; }};
    }
    if (name.rfind("y", 0) == 0)
    {
        int i = index("y", L.l);
        return {name, [L, i](std::span<Dual const> z) { return z[static_cast<std::size_t>(L.y(i))]; }};
    }
    throw Error(ErrorCode::InvalidArgument, "unknown coordinate '" + name + "'");
}

//---------------------------------------------------------------------------//
// Conservation
//---------------------------------------------------------------------------//
/*!
 * max |p|/τ² on interior segments and |margin|/τ² on gliding segments, sampled
 * at every knot and every knot midpoint. The gliding part is scaled by
 * tol / tol_glide so one statistic carries both bounds.
 */
inline PropertyReport check_conservation(Chart const& chart, Ray const& ray, int ray_id = 0, double tol = 1e-8,
                                         double tol_glide = 1e-6)
{
    PropertyReport r;
    r.name = "conservation";
    r.ray_id = ray_id;
    r.tolerance = tol;
    double worst_p = 0.0, worst_g = 0.0;
    auto visit = [&](Segment const& sg, Vec const& z, double s) {
        double tau = z[ray.layout.tau()];
        if (sg.kind == SegmentKind::Interior)
        {
            double v = std::abs(principal_symbol(chart, z)) / (tau * tau);
            if (v > worst_p)
                worst_p = v;
            if (v > r.statistic)
            {
                r.statistic = v;
                r.s = s;
            }
        }
        else
        {
            double v = std::abs(glide_margin(chart, sg.face, z)) / (tau * tau);
            worst_g = std::max(worst_g, v);
            double scaled = v * tol / tol_glide;
            if (scaled > r.statistic)
            {
                r.statistic = scaled;
                r.s = s;
            }
        }
    };
    for (Segment const& sg : ray.segments)
    {
        for (std::size_t i = 0; i < sg.knots.size(); ++i)
        {
            visit(sg, sg.knots[i].z, sg.knots[i].s);
            if (i + 1 < sg.knots.size())
            {
                double sm = 0.5 * (sg.knots[i].s + sg.knots[i + 1].s);
                visit(sg, sg.state_at(sm), sm);
            }
        }
    }
    r.details = {{"interior_max", worst_p}, {"gliding_max", worst_g}, {"tol_gliding", tol_glide}};
    r.finish();
    return r;
}

//---------------------------------------------------------------------------//
// Lipschitz
//---------------------------------------------------------------------------//
struct ParameterBox
{
    double s_a = 0.0;
    double s_b = 1.0;
    //! base box for (x, y, t); empty vectors mean unbounded
    Vec x_lo, x_hi, y_lo, y_hi;
    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();

    bool contains(CotangentPoint const& q) const
    {
        auto in = [](Vec const& v, Vec const& lo, Vec const& hi) {
            for (int i = 0; i < lo.size() && i < v.size(); ++i)
                if (v[i] < lo[i] || v[i] > hi[i])
                    return false;
            return true;
        };
        return in(q.x, x_lo, x_hi) && in(q.y, y_lo, y_hi) && q.t >= t_lo && q.t <= t_hi;
    }
};

/*!
 * Largest difference quotient |f(s_{i+1}) − f(s_i)|/Δs on a uniform grid of
 * `n_grid` points over [s_a, s_b], for each coordinate group (Euclidean norm
 * within a group). Rays leaving the box on the grid are dropped first.
 */
inline PropertyReport check_lipschitz(std::vector<Ray> const& rays, std::vector<std::string> const& coordinates,
                                      ParameterBox const& K, double M, int n_grid = 2001)
{
    if (n_grid < 2)
        throw Error(ErrorCode::EmptyGrid, "need at least two grid points");
    PropertyReport r;
    r.name = "lipschitz";
    r.tolerance = M;
    std::vector<double> grid(static_cast<std::size_t>(n_grid));
    for (int i = 0; i < n_grid; ++i)
        grid[static_cast<std::size_t>(i)] = K.s_a + (K.s_b - K.s_a) * i / (n_grid - 1);
    std::vector<double> worst(coordinates.size(), 0.0);
    int kept = 0;
    for (std::size_t id = 0; id < rays.size(); ++id)
    {
        Ray const& ray = rays[id];
        if (ray.s_min() > K.s_a || ray.s_max() < K.s_b)
            continue;
        auto qs = sample_ray(ray, grid);
        bool inside = std::all_of(qs.begin(), qs.end(), [&](CotangentPoint const& q) { return K.contains(q); });
        if (!inside)
            continue;
        ++kept;
        for (std::size_t c = 0; c < coordinates.size(); ++c)
        {
            auto pick = [&](CotangentPoint const& q) -> Vec {
                std::string const& name = coordinates[c];
                if (name == "x")
                    return q.x;
                if (name == "y")
                    return q.y;
                if (name == "zeta")
                    return q.zeta;
                if (name == "t")
                    return Vec::Constant(1, q.t);
                if (name == "tau")
                    return Vec::Constant(1, q.tau);
                throw Error(ErrorCode::InvalidArgument, "unknown coordinate group '" + name + "'");
            };
            for (int i = 0; i + 1 < n_grid; ++i)
            {
                double ds = grid[static_cast<std::size_t>(i + 1)] - grid[static_cast<std::size_t>(i)];
                double qv = (pick(qs[static_cast<std::size_t>(i + 1)]) - pick(qs[static_cast<std::size_t>(i)])).norm() / ds;
                if (qv > worst[c])
                    worst[c] = qv;
                if (qv > r.statistic)
                {
                    r.statistic = qv;
                    r.ray_id = static_cast<int>(id);
                    r.s = grid[static_cast<std::size_t>(i)];
                }
            }
        }
    }
    if (kept == 0)
        throw Error(ErrorCode::EmptyFamily, "no ray stays inside the parameter box");
    for (std::size_t c = 0; c < coordinates.size(); ++c)
        r.details.push_back({"quotient_" + coordinates[c], worst[c]});
    r.details.push_back({"rays_used", static_cast<double>(kept)});
    r.finish();
    return r;
}

//---------------------------------------------------------------------------//
// One-sided derivatives
//---------------------------------------------------------------------------//
/*!
 * One-sided slopes of f along the ray at a Reflection, Richardson-extrapolated
 * from forward differences with h = 1e-3 and 1e-4, against H_p f at the
 * stored one-sided limits.
 */
inline PropertyReport check_one_sided(Chart const& chart, Ray const& ray, std::size_t event_index, PiFunction const& f,
                                      double tol = 1e-4, double h1 = 1e-3, double h2 = 1e-4)
{
    if (event_index >= ray.events.size() || ray.events[event_index].kind != EventKind::Reflection)
        throw Error(ErrorCode::NotAnEvent, "event index does not name a reflection");
    Event const& e = ray.events[event_index];
    PropertyReport r;
    r.name = "one_sided_" + f.name;
    r.tolerance = tol;
    r.s = e.s;
    auto exact = [&](Vec const& z) { return hp_derivative(chart, z, f.f); };
    auto slope = [&](double sign, Vec const& z0, double h) {
        double s1 = e.s + sign * h;
        Vec z1 = sample_states(ray, {s1}, sign < 0).front();
        return sign * (f(z1) - f(z0)) / h;
    };
    double worst = 0.0;
    double sides[2][3] = {};
    int k = 0;
    for (double sign : {-1.0, 1.0})
    {
        Vec const& z0 = sign < 0 ? e.z_left : e.z_right;
        double d1 = slope(sign, z0, h1), d2 = slope(sign, z0, h2);
        double rich = (h1 * d2 - h2 * d1) / (h1 - h2);
        double ex = exact(z0);
        worst = std::max(worst, std::abs(rich - ex));
        sides[k][0] = rich;
        sides[k][1] = ex;
        ++k;
    }
    r.statistic = worst;
    r.details = {{"left_slope", sides[0][0]}, {"left_hp", sides[0][1]},
                 {"right_slope", sides[1][0]}, {"right_hp", sides[1][1]}};
    r.finish();
    return r;
}

//---------------------------------------------------------------------------//
// Leaving the face
//---------------------------------------------------------------------------//
/*!
 * For each Reflection, the largest h on the grid 10^(−12 + i/2), i = 0..18,
 * for which some face coordinate has not moved away from its wall at
 * s_event + h (0 if none). Windows are measured in the flow direction.
 */
inline PropertyReport check_leaves_face(Chart const& chart, Ray const& ray, double event_tol = 1e-10,
                                        int ray_id = 0)
{
    PropertyReport r;
    r.name = "leaves_face";
    r.ray_id = ray_id;
    r.tolerance = 10.0 * event_tol;
    PhaseLayout L = ray.layout;
    int dir = static_cast<int>(ray.direction);
    int counted = 0;
    for (std::size_t ie = 0; ie < ray.events.size(); ++ie)
    {
        Event const& e = ray.events[ie];
        if (e.kind != EventKind::Reflection)
            continue;
        ++counted;
        double limit = dir > 0 ? ray.s_max() : -ray.s_min();
        for (std::size_t je = 0; je < ray.events.size(); ++je)
        {
            double d = dir * (ray.events[je].s - e.s);
            if (d > 0)
                limit = std::min(limit, dir * e.s + d);
        }
        Vec const& z0 = dir > 0 ? e.z_right : e.z_left;
        auto dist = [&](Vec const& z, int j) {
            return e.face.side(j) > 0 ? z[L.x(j)] : chart.domain().x_max[j] - z[L.x(j)];
        };
        double window = 0.0;
        for (int i = 0; i <= 18; ++i)
        {
            double h = std::pow(10.0, -12.0 + 0.5 * i);
            if (dir * e.s + h > limit)
                break;
            Vec z = sample_states(ray, {e.s + dir * h}, dir < 0).front();
            bool stays = false;
            for (int j : e.face.indices())
                if (dist(z, j) <= dist(z0, j))
                    stays = true;
            if (stays)
                window = h;
        }
        if (window >= r.statistic)
        {
            r.statistic = window;
            r.s = e.s;
        }
    }
    r.details = {{"reflections", static_cast<double>(counted)}};
    r.finish();
    return r;
}

//---------------------------------------------------------------------------//
// Uniform limits
//---------------------------------------------------------------------------//
//! Distance on the compressed slice: (x, y, t, ζ/|τ|, τ/|τ|).
inline double compressed_distance(PhaseLayout const& L, Vec const& a, Vec const& b)
{
    double ta = std::abs(a[L.tau()]), tb = std::abs(b[L.tau()]);
    double acc = 0.0;
    for (int j = 0; j < L.k; ++j)
        acc += std::pow(a[L.x(j)] - b[L.x(j)], 2);
    for (int i = 0; i < L.l; ++i)
    {
        acc += std::pow(a[L.y(i)] - b[L.y(i)], 2);
        acc += std::pow(a[L.zeta(i)] / ta - b[L.zeta(i)] / tb, 2);
    }
    acc += std::pow(a[L.t()] - b[L.t()], 2);
    acc += std::pow(a[L.tau()] / ta - b[L.tau()] / tb, 2);
    return std::sqrt(acc);
}

struct UniformLimitReport
{
    PropertyReport summary;
    std::vector<double> distances;  //!< sup distance per family member
    PropertyReport conservation;
    PropertyReport leaves;
};

/*!
 * Sup compressed distance on [a, b] between each family member and the
 * candidate. Passes when the distances are nonincreasing, the last one is
 * at most delta_conv, and the candidate passes the single-ray checks.
 */
inline UniformLimitReport check_uniform_limit(Chart const& chart, std::vector<Ray> const& family, Ray const& candidate,
                                              double a, double b, double delta_conv = 1e-3, int n_grid = 2001)
{
    if (family.empty())
        throw Error(ErrorCode::EmptyFamily, "empty family");
    if (!(b > a) || n_grid < 2)
        throw Error(ErrorCode::MismatchedIntervals, "need a nonempty common interval");
    auto covers = [&](Ray const& r) { return r.s_min() <= a && r.s_max() >= b; };
    if (!covers(candidate))
        throw Error(ErrorCode::MismatchedIntervals, "candidate does not cover the interval");
    for (Ray const& r : family)
    {
        if (r.layout.k != candidate.layout.k || r.layout.l != candidate.layout.l)
            throw Error(ErrorCode::ChartMismatch, "family member from a different chart");
        if (!covers(r))
            throw Error(ErrorCode::MismatchedIntervals, "family member does not cover the interval");
    }
    std::vector<double> grid(static_cast<std::size_t>(n_grid));
    for (int i = 0; i < n_grid; ++i)
        grid[static_cast<std::size_t>(i)] = a + (b - a) * i / (n_grid - 1);
    auto cz = sample_states(candidate, grid);
    UniformLimitReport out;
    out.summary.name = "uniform_limit";
    out.summary.tolerance = delta_conv;
    bool monotone = true;
    for (std::size_t n = 0; n < family.size(); ++n)
    {
        auto fz = sample_states(family[n], grid);
        double sup = 0.0;
        double where = a;
        for (std::size_t i = 0; i < grid.size(); ++i)
        {
            double d = compressed_distance(candidate.layout, fz[i], cz[i]);
            if (d > sup)
            {
                sup = d;
                where = grid[i];
            }
        }
        if (n > 0 && sup > out.distances.back())
            monotone = false;
        out.distances.push_back(sup);
        out.summary.details.push_back({"sup_distance_" + std::to_string(n), sup});
        if (n + 1 == family.size())
        {
            out.summary.statistic = sup;
            out.summary.ray_id = static_cast<int>(n);
            out.summary.s = where;
        }
    }
    out.conservation = check_conservation(chart, candidate);
    out.leaves = check_leaves_face(chart, candidate);
    out.summary.details.push_back({"monotone", monotone ? 1.0 : 0.0});
    out.summary.details.push_back({"candidate_conservation", out.conservation.statistic});
    out.summary.details.push_back({"candidate_leaves_face", out.leaves.statistic});
    out.summary.pass = monotone && out.summary.statistic <= delta_conv && out.conservation.pass && out.leaves.pass;
    return out;
}

//---------------------------------------------------------------------------//
// Reversal
//---------------------------------------------------------------------------//
/*!
 * reverse∘reverse must reproduce every sampled state bit for bit, and the
 * reversed ray re-traced from its first state must follow it within `tol`
 * (sup of the full state difference over a uniform grid of the common range,
 * away from events, together with the shift in interior event parameters).
 */
inline PropertyReport check_reversal(Chart const& chart, Ray const& ray, TraceConfig cfg, int ray_id = 0,
                                     double tol = 1e-6, int n_grid = 401)
{
    if (ray.segments.empty() || n_grid < 2)
        throw Error(ErrorCode::EmptyGrid, "nothing to sample");
    PropertyReport r;
    r.name = "reversal";
    r.ray_id = ray_id;
    r.tolerance = tol;
    PhaseLayout L = ray.layout;
    auto grid_of = [&](double a, double b) {
        std::vector<double> g(static_cast<std::size_t>(n_grid));
        for (int i = 0; i < n_grid; ++i)
            g[static_cast<std::size_t>(i)] = a + (b - a) * i / (n_grid - 1);
        g.back() = b;
        return g;
    };

    Ray twice = reverse(reverse(ray));
    double involution = 0.0;
    auto g0 = grid_of(ray.s_min(), ray.s_max());
    for (bool left : {false, true})
    {
        auto a = sample_states(ray, g0, left), b = sample_states(twice, g0, left);
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!(a[i].array() == b[i].array()).all())
                involution = std::max(involution, std::max((a[i] - b[i]).norm(), 1e-300));
    }

    Ray rev = reverse(ray);
    Segment const& first = rev.segments.front();
    Vec z0 = first.knots.front().z;
    cfg.direction = Direction::Forward;
    cfg.rule = BranchRule::specular();
    cfg.s0 = rev.s_min();
    cfg.integrator.max_time = rev.s_max() - rev.s_min();
    Ray again = trace_ray(chart, L.unpack(z0), cfg);
    double lo = std::max(rev.s_min(), again.s_min()), hi = std::min(rev.s_max(), again.s_max());
    double coverage = (hi - lo) / std::max(rev.s_max() - rev.s_min(), 1e-300);
    double retrace = 0.0, event_shift = 0.0;
    if (hi > lo)
    {
        // events strictly inside the common range must pair up; their
        // parameters may differ by rounding, so grid points near an event
        // are skipped and the event parameters compared instead
        auto inner = [&](Ray const& x) {
            std::vector<double> out;
            for (Event const& e : x.events)
                if (e.s > lo + tol && e.s < hi - tol)
                    out.push_back(e.s);
            return out;
        };
        auto ea = inner(rev), eb = inner(again);
        if (ea.size() != eb.size())
            event_shift = std::numeric_limits<double>::infinity();
        else
            for (std::size_t i = 0; i < ea.size(); ++i)
                event_shift = std::max(event_shift, std::abs(ea[i] - eb[i]));
        auto near_event = [&](double s) {
            for (double e : ea)
                if (std::abs(s - e) <= tol)
                    return true;
            for (double e : eb)
                if (std::abs(s - e) <= tol)
                    return true;
            return false;
        };
        auto g = grid_of(lo, hi);
        auto a = sample_states(rev, g), b = sample_states(again, g);
        // endpoints may carry an event of one ray and not the other
        for (std::size_t i = 1; i + 1 < g.size(); ++i)
        {
            if (near_event(g[i]))
                continue;
            double d = (a[i] - b[i]).norm();
            if (d > retrace)
            {
                retrace = d;
                r.s = g[i];
            }
        }
    }
    retrace = std::max(retrace, event_shift);
    r.statistic = retrace;
    r.details = {{"involution_max", involution}, {"coverage", coverage}, {"event_shift", event_shift}};
    r.pass = involution == 0.0 && coverage >= 0.99 && retrace <= tol;
    return r;
}

//---------------------------------------------------------------------------//
// Flat billiard oracle
//---------------------------------------------------------------------------//
//! True if A = I, B = I, C = 0 as constant expressions.
inline bool is_flat(Chart const& chart)
{
    auto check = [](std::vector<Expression> const& es, int n, bool identity) {
        for (int i = 0; i < static_cast<int>(es.size()); ++i)
        {
            Expression const& e = es[static_cast<std::size_t>(i)];
            if (!e.is_constant())
                return false;
            double want = (identity && n > 0 && i / n == i % n) ? 1.0 : 0.0;
            if (e.eval<double>(std::span<double const>()) != want)
                return false;
        }
        return true;
    };
    return check(chart.coeffs().A, chart.k(), true) && check(chart.coeffs().B, chart.l(), true)
           && check(chart.coeffs().C, 0, false);
}

/*!
 * Closed-form straight-line billiard in a flat chart: lower walls x_j = 0,
 * upper walls where the chart declares them, exits elsewhere. Times to the
 * next wall are computed exactly from the affine motion; hits within
 * `corner_tol` of each other reflect together.
 */
inline Ray billiard_oracle_flat(Chart const& chart, CotangentPoint q0, double max_time, double s0 = 0.0,
                                double corner_tol = 1e-12)
{
    if (!is_flat(chart))
        throw Error(ErrorCode::NotFlat, "oracle needs A = I, B = I, C = 0");
    PhaseLayout L = chart.layout();
    Domain const& D = chart.domain();
    double scale = 1.0 / std::abs(q0.tau);
    q0.xi *= scale;
    q0.zeta *= scale;
    q0.tau *= scale;
    Ray ray;
    ray.layout = L;
    Vec z = L.pack(q0);
    double s = s0;
    double s_stop = s0 + max_time;
    auto velocity = [&](Vec const& zz) {
        Vec v = Vec::Zero(L.size());
        for (int j = 0; j < L.k; ++j)
            v[L.x(j)] = -2.0 * zz[L.xi(j)];
        for (int i = 0; i < L.l; ++i)
            v[L.y(i)] = -2.0 * zz[L.zeta(i)];
        v[L.t()] = 2.0 * zz[L.tau()];
        return v;
    };
    for (int guard = 0; guard < 1000000; ++guard)
    {
        Vec v = velocity(z);
        struct Hit
        {
            double dt;
            int kind;  // 0 lower wall, 1 upper wall, 2 exit
            int j;
        };
        std::vector<Hit> hits;
        for (int j = 0; j < L.k; ++j)
        {
            double x = z[L.x(j)], vx = v[L.x(j)];
            if (vx < 0)
                hits.push_back({x / -vx, 0, j});
            else if (vx > 0)
                hits.push_back({(D.x_max[j] - x) / vx, chart.upper_wall(j) ? 1 : 2, j});
        }
        for (int i = 0; i < L.l; ++i)
        {
            double y = z[L.y(i)], vy = v[L.y(i)];
            if (vy < 0)
                hits.push_back({(y - D.y_min[i]) / -vy, 2, -1});
            else if (vy > 0)
                hits.push_back({(D.y_max[i] - y) / vy, 2, -1});
        }
        double vt = v[L.t()];
        hits.push_back({vt > 0 ? (D.t_max - z[L.t()]) / vt : (z[L.t()] - D.t_min) / -vt, 2, -1});
        double best = std::numeric_limits<double>::infinity();
        for (auto const& h : hits)
            best = std::min(best, h.dt);
        Segment sg;
        sg.kind = SegmentKind::Interior;
        sg.s_start = s;
        bool horizon = s + best >= s_stop;
        double dt = horizon ? s_stop - s : best;
        Vec z1 = z + dt * v;
        sg.s_end = s + dt;
        sg.knots.push_back({s, z, v});
        sg.knots.push_back({s + dt, z1, v});
        ray.segments.push_back(sg);
        s += dt;
        Event e;
        e.s = s;
        if (horizon)
        {
            e.kind = EventKind::TimeHorizon;
            e.z_left = e.z_right = z1;
            ray.events.push_back(e);
            return ray;
        }
        FaceId face;
        bool exit = false;
        for (auto const& h : hits)
        {
            if (h.dt - best > corner_tol * std::max(1.0, best))
                continue;
            if (h.kind == 2)
                exit = true;
            else if (h.kind == 0)
            {
                face.add_lower(h.j);
                z1[L.x(h.j)] = 0.0;
            }
            else
            {
                face.add_upper(h.j);
                z1[L.x(h.j)] = D.x_max[h.j];
            }
        }
        if (exit)
        {
            e.kind = EventKind::DomainExit;
            e.z_left = e.z_right = z1;
            ray.events.push_back(e);
            return ray;
        }
        Vec zo = z1;
        for (int j : face.indices())
            zo[L.xi(j)] = -z1[L.xi(j)];
        e.kind = EventKind::Reflection;
        e.face = face;
        e.z_left = z1;
        e.z_right = zo;
        e.lift_in = face_components(L, face, z1);
        e.lift_out = face_components(L, face, zo);
        ray.events.push_back(e);
        z = zo;
    }
    throw Error(ErrorCode::StepFailure, "oracle exceeded its event budget");
}

/*!
 * Trace q0 and the flat oracle over the same horizon; the statistic is the
 * largest difference in event parameters and post-event states (events must
 * agree in number and kind, otherwise the statistic is infinite).
 */
inline PropertyReport compare_to_oracle(Chart const& chart, CotangentPoint const& q0, TraceConfig const& cfg,
                                        int ray_id = 0, double tol = 1e-9)
{
    PropertyReport r;
    r.name = "oracle";
    r.ray_id = ray_id;
    r.tolerance = tol;
    Ray traced = trace_ray(chart, q0, cfg);
    Ray exact = billiard_oracle_flat(chart, q0, cfg.integrator.max_time, cfg.s0);
    int reflections = 0;
    double ds = 0.0, dz = 0.0;
    if (traced.events.size() != exact.events.size())
        r.statistic = std::numeric_limits<double>::infinity();
    else
    {
        for (std::size_t i = 0; i < exact.events.size(); ++i)
        {
            Event const& a = traced.events[i];
            Event const& b = exact.events[i];
            if (a.kind != b.kind)
            {
                r.statistic = std::numeric_limits<double>::infinity();
                r.s = b.s;
                break;
            }
            if (b.kind == EventKind::Reflection)
                ++reflections;
            double d1 = std::abs(a.s - b.s), d2 = (a.z_right - b.z_right).norm();
            ds = std::max(ds, d1);
            dz = std::max(dz, d2);
            if (std::max(d1, d2) > r.statistic)
            {
                r.statistic = std::max(d1, d2);
                r.s = b.s;
            }
        }
    }
    r.details = {{"events_traced", static_cast<double>(traced.events.size())},
                 {"events_oracle", static_cast<double>(exact.events.size())},
                 {"reflections", static_cast<double>(reflections)},
                 {"max_event_s_diff", ds},
                 {"max_state_diff", dz}};
    r.finish();
    return r;
}

}  // namespace brokenray
