#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dual.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "integrator.hpp"

namespace brokenray {

//---------------------------------------------------------------------------//
// Symbol evaluation on flat state vectors
//---------------------------------------------------------------------------//
/*!
 * Coefficients A, B, C evaluated at the base point of a state vector,
 * row-major, on any scalar type.
 */
template <class T>
struct MetricArrays
{
    std::vector<T> A, B, C;

    MetricArrays(Chart const& chart, std::span<T const> z)
        : A(static_cast<std::size_t>(chart.k() * chart.k())), B(static_cast<std::size_t>(chart.l() * chart.l())),
          C(static_cast<std::size_t>(chart.k() * chart.l()))
    {
        chart.metric<T>(z.first(static_cast<std::size_t>(chart.k() + chart.l())), A.data(), B.data(), C.data());
    }
};

//! g = ξ·Aξ + 2ξ·Cζ + ζ·Bζ given the coefficient arrays and fibers.
template <class T, class U>
U metric_form(MetricArrays<T> const& m, int k, int l, std::span<U const> xi, std::span<U const> zeta)
{
    U g(0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            g += U(m.A[static_cast<std::size_t>(i * k + j)]) * xi[i] * xi[j];
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < l; ++j)
            g += U(2.0) * U(m.C[static_cast<std::size_t>(i * l + j)]) * xi[i] * zeta[j];
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j)
            g += U(m.B[static_cast<std::size_t>(i * l + j)]) * zeta[i] * zeta[j];
    return g;
}

//! Principal symbol p = τ² − g on a flat state vector.
template <class T>
T principal_symbol(Chart const& chart, std::span<T const> z)
{
    PhaseLayout L = chart.layout();
    MetricArrays<T> m(chart, z);
    auto xi = z.subspan(static_cast<std::size_t>(L.xi(0)), static_cast<std::size_t>(L.k));
    auto zeta = z.subspan(static_cast<std::size_t>(L.zeta(0)), static_cast<std::size_t>(L.l));
    T tau = z[static_cast<std::size_t>(L.tau())];
    return tau * tau - metric_form<T, T>(m, L.k, L.l, xi, zeta);
}

inline double principal_symbol(Chart const& chart, Vec const& z)
{
    return principal_symbol<double>(chart, std::span<double const>(z.data(), static_cast<std::size_t>(z.size())));
}

//! dx_j = −2(Aξ + Cζ)_j on a flat state vector.
template <class T>
T velocity_x(Chart const& chart, std::span<T const> z, int j)
{
    PhaseLayout L = chart.layout();
    MetricArrays<T> m(chart, z);
    T v(0.0);
    for (int i = 0; i < L.k; ++i)
        v += m.A[static_cast<std::size_t>(j * L.k + i)] * z[static_cast<std::size_t>(L.xi(i))];
    for (int i = 0; i < L.l; ++i)
        v += m.C[static_cast<std::size_t>(j * L.l + i)] * z[static_cast<std::size_t>(L.zeta(i))];
    return T(-2.0) * v;
}

//! η = −x·ξ/|τ| on a flat state vector.
template <class T>
T eta(PhaseLayout const& L, std::span<T const> z)
{
    T s(0.0);
    for (int j = 0; j < L.k; ++j)
        s += z[static_cast<std::size_t>(L.x(j))] * z[static_cast<std::size_t>(L.xi(j))];
    T tau = z[static_cast<std::size_t>(L.tau())];
    return -s / (value_of(tau) < 0 ? -tau : tau);
}

/*!
 * Hamilton vector field of p on a flat state vector, without domain checks.
 *
 * Base components are explicit: dx = −2Aξ − 2Cζ, dy = −2Bζ − 2Cᵀξ,
 * dt = 2τ. Fiber components are dξ = ∂_x g and dζ = ∂_y g, with the
 * coefficient derivatives taken by one dual pass per base coordinate;
 * dτ = 0.
 */
inline Vec hamilton_field(Chart const& chart, Vec const& z)
{
    PhaseLayout L = chart.layout();
    int const k = L.k, l = L.l;
    std::span<double const> zs(z.data(), static_cast<std::size_t>(z.size()));
    MetricArrays<double> m(chart, zs);
    auto xi = zs.subspan(static_cast<std::size_t>(L.xi(0)), static_cast<std::size_t>(k));
    auto zeta = zs.subspan(static_cast<std::size_t>(L.zeta(0)), static_cast<std::size_t>(l));
    Vec out = Vec::Zero(L.size());
    for (int i = 0; i < k; ++i)
    {
        double v = 0.0;
        for (int j = 0; j < k; ++j)
            v += m.A[static_cast<std::size_t>(i * k + j)] * xi[j];
        for (int j = 0; j < l; ++j)
            v += m.C[static_cast<std::size_t>(i * l + j)] * zeta[j];
        out[L.x(i)] = -2.0 * v;
    }
    for (int i = 0; i < l; ++i)
    {
        double v = 0.0;
        for (int j = 0; j < l; ++j)
            v += m.B[static_cast<std::size_t>(i * l + j)] * zeta[j];
        for (int j = 0; j < k; ++j)
            v += m.C[static_cast<std::size_t>(j * l + i)] * xi[j];
        out[L.y(i)] = -2.0 * v;
    }
    out[L.t()] = 2.0 * z[L.tau()];

    std::vector<Dual> xy(static_cast<std::size_t>(k + l));
    for (int c = 0; c < k + l; ++c)
        xy[static_cast<std::size_t>(c)] = Dual(z[c]);
    for (int c = 0; c < k + l; ++c)
    {
        xy[static_cast<std::size_t>(c)].d = 1.0;
        MetricArrays<Dual> md(chart, std::span<Dual const>(xy));
        xy[static_cast<std::size_t>(c)].d = 0.0;
        double dg = 0.0;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                dg += md.A[static_cast<std::size_t>(i * k + j)].d * xi[i] * xi[j];
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < l; ++j)
                dg += 2.0 * md.C[static_cast<std::size_t>(i * l + j)].d * xi[i] * zeta[j];
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < l; ++j)
                dg += md.B[static_cast<std::size_t>(i * l + j)].d * zeta[i] * zeta[j];
        // c < k indexes x_c (so ξ_c), otherwise y_{c-k} (so ζ_{c-k})
        out[L.half() + c] = dg;
    }
    return out;
}

/*!
 * Derivative of a phase-space function along a vector field at z, by one dual
 * pass seeded with `v`. `f` takes std::span<Dual const> and returns Dual.
 */
template <class F>
double directional_derivative(Vec const& z, Vec const& v, F&& f)
{
    std::vector<Dual> zd(static_cast<std::size_t>(z.size()));
    for (int i = 0; i < z.size(); ++i)
        zd[static_cast<std::size_t>(i)] = Dual(z[i], v[i]);
    return f(std::span<Dual const>(zd)).d;
}

//! H_p f at z.
template <class F>
double hp_derivative(Chart const& chart, Vec const& z, F&& f)
{
    return directional_derivative(z, hamilton_field(chart, z), std::forward<F>(f));
}

//---------------------------------------------------------------------------//
// Public operations
//---------------------------------------------------------------------------//
struct PhaseVelocity
{
    Vec dx;
    Vec dy;
    double dt = 0.0;
    Vec dxi;
    Vec dzeta;
    double dtau = 0.0;
};

inline void require_in_domain(Chart const& chart, CotangentPoint const& q)
{
    if (q.x.size() != chart.k() || q.y.size() != chart.l() || q.xi.size() != chart.k()
        || q.zeta.size() != chart.l())
        throw Error(ErrorCode::ChartMismatch, "point dimensions do not match the chart");
    if (!chart.contains_base(q.x, q.y))
        throw Error(ErrorCode::OutOfDomain, "base point outside the chart box");
}

//! p(q) = τ² − (ξ·Aξ + 2ξ·Cζ + ζ·Bζ)
inline double eval_p(Chart const& chart, CotangentPoint const& q)
{
    require_in_domain(chart, q);
    return principal_symbol(chart, chart.layout().pack(q));
}

inline PhaseVelocity eval_Hp(Chart const& chart, CotangentPoint const& q)
{
    require_in_domain(chart, q);
    PhaseLayout L = chart.layout();
    Vec v = hamilton_field(chart, L.pack(q));
    PhaseVelocity pv;
    pv.dx = v.segment(0, L.k);
    pv.dy = v.segment(L.k, L.l);
    pv.dt = v[L.t()];
    pv.dxi = v.segment(L.half(), L.k);
    pv.dzeta = v.segment(L.half() + L.k, L.l);
    pv.dtau = v[L.tau()];
    return pv;
}

inline double eval_eta(CotangentPoint const& q)
{
    if (q.tau == 0.0)
        throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
    return -q.x.dot(q.xi) / std::abs(q.tau);
}

/*!
 * H_p η at a point over x = 0, the common value over all lifts in Char(P):
 * (2τ² − 2ζ·B(0, y)ζ)/|τ|.
 */
inline double eval_Hp_eta_boundary(Chart const& chart, CompressedPoint const& q)
{
    if (q.face.codim() != chart.k() || q.face.upper != 0)
        throw Error(ErrorCode::InvalidArgument, "point must lie over the corner x = 0");
    MetricAt m = chart.metric_at(Vec::Zero(chart.k()), q.y);
    double zb = q.zeta.dot(m.B * q.zeta);
    return (2.0 * q.tau * q.tau - 2.0 * zb) / std::abs(q.tau);
}

//---------------------------------------------------------------------------//
// Segments and interior flow
//---------------------------------------------------------------------------//
enum class SegmentKind { Interior, Gliding };

enum class Terminal
{
    BoundaryHit,   //!< reached a reflecting wall (face in hit_face)
    TimeHorizon,   //!< flow-parameter horizon
    DomainExit,    //!< left the chart box through a non-reflecting side
    Diffractive,   //!< gliding segment reached a diffractive point
    BandExit,      //!< gliding segment left the glancing band
    Handoff,       //!< segment ended at a branch or by construction
};

inline std::string_view to_string(SegmentKind k) { return k == SegmentKind::Interior ? "interior" : "gliding"; }

inline std::string_view to_string(Terminal t)
{
    switch (t)
    {
        case Terminal::BoundaryHit: return "boundary_hit";
        case Terminal::TimeHorizon: return "time_horizon";
        case Terminal::DomainExit: return "domain_exit";
        case Terminal::Diffractive: return "diffractive";
        case Terminal::BandExit: return "band_exit";
        case Terminal::Handoff: return "handoff";
    }
    return "?";
}

/*!
 * Piece of a ray between events: knots at every accepted step plus the
 * integrator's dense output. Segments reloaded from disk have no dense output
 * and interpolate with cubic Hermite polynomials on the knots.
 */
struct Segment
{
    SegmentKind kind = SegmentKind::Interior;
    FaceId face;      //!< face glided along (gliding only)
    FaceId hit_face;  //!< face reached at the end (BoundaryHit only)
    Terminal terminal = Terminal::TimeHorizon;
    double s_start = 0.0;
    double s_end = 0.0;
    std::vector<Knot> knots;
    std::vector<DenseStep> dense;
    double max_drift = 0.0;
    bool drift_warning = false;
    //! dense output belongs to the time-reversed curve: evaluate at −s and negate the fiber
    bool mirrored = false;

    double s_min() const { return std::min(s_start, s_end); }
    double s_max() const { return std::max(s_start, s_end); }

    Vec state_at(double s) const
    {
        if (knots.empty())
            throw Error(ErrorCode::OutOfRange, "empty segment");
        for (Knot const& kn : knots)
            if (kn.s == s)
                return kn.z;
        if (s < s_min() || s > s_max())
            throw Error(ErrorCode::OutOfRange, "parameter outside segment");
        if (!dense.empty())
        {
            // steps are ordered along the direction of integration
            double sd = mirrored ? -s : s;
            bool fwd = dense.front().h > 0;
            auto it = std::lower_bound(dense.begin(), dense.end(), sd, [fwd](DenseStep const& d, double v) {
                return fwd ? d.s1() < v : d.s1() > v;
            });
            if (it == dense.end())
                --it;
            Vec z = it->eval(sd);
            if (mirrored)
            {
                int h = static_cast<int>(z.size()) / 2;
                z.tail(h) = -z.tail(h);
            }
            return z;
        }
        bool fwd = knots.back().s >= knots.front().s;
        auto it = std::lower_bound(knots.begin(), knots.end(), s,
                                   [fwd](Knot const& kn, double v) { return fwd ? kn.s < v : kn.s > v; });
        if (it == knots.begin())
            return it->z;
        if (it == knots.end())
            return knots.back().z;
        Knot const& b = *it;
        Knot const& a = *(it - 1);
        double h = b.s - a.s;
        double u = (s - a.s) / h;
        double h00 = (1 + 2 * u) * (1 - u) * (1 - u), h10 = u * (1 - u) * (1 - u), h01 = u * u * (3 - 2 * u),
               h11 = u * u * (u - 1);
        return h00 * a.z + h10 * h * a.dz + h01 * b.z + h11 * h * b.dz;
    }
};

using InteriorSegment = Segment;

enum class Direction { Forward = 1, Backward = -1 };

namespace detail {

//! Event tags: 0..k-1 lower walls, 100+j upper side of x_j, 200+i / 300+i y sides, 400/401 t sides.
inline std::vector<EventFunction> box_events(Chart const& chart)
{
    PhaseLayout L = chart.layout();
    std::vector<EventFunction> ev;
    for (int j = 0; j < L.k; ++j)
    {
        int ix = L.x(j);
        double xm = chart.domain().x_max[j];
        ev.push_back({[ix](Vec const& z) { return z[ix]; }, j});
        ev.push_back({[ix, xm](Vec const& z) { return xm - z[ix]; }, 100 + j});
    }
    for (int i = 0; i < L.l; ++i)
    {
        int iy = L.y(i);
        double lo = chart.domain().y_min[i], hi = chart.domain().y_max[i];
        ev.push_back({[iy, lo](Vec const& z) { return z[iy] - lo; }, 200 + i});
        ev.push_back({[iy, hi](Vec const& z) { return hi - z[iy]; }, 300 + i});
    }
    int it = L.t();
    double t0 = chart.domain().t_min, t1 = chart.domain().t_max;
    ev.push_back({[it, t0](Vec const& z) { return z[it] - t0; }, 400});
    ev.push_back({[it, t1](Vec const& z) { return t1 - z[it]; }, 401});
    return ev;
}

//! Split fired box-event tags into a wall face and a domain-exit flag.
inline std::pair<FaceId, bool> classify_fired(Chart const& chart, std::vector<int> const& fired)
{
    FaceId f;
    bool exit = false;
    for (int tag : fired)
    {
        if (tag < 100)
            f.add_lower(tag);
        else if (tag < 200)
        {
            if (chart.upper_wall(tag - 100))
                f.add_upper(tag - 100);
            else
                exit = true;
        }
        else
            exit = true;
    }
    return {f, exit};
}

}  // namespace detail

/*!
 * Integrate the H_p flow from q0 until the first wall crossing, the
 * flow-parameter horizon, or exit from the chart box.
 *
 * q0 must be interior or on a face with strictly inward velocity on every
 * face index, unless `require_inward` is false (tangent departures from
 * diffractive points). `s0` labels the starting parameter; `span` defaults
 * to cfg.max_time.
 */
inline InteriorSegment flow_interior(Chart const& chart, CotangentPoint const& q0, IntegratorConfig const& cfg,
                                     Direction direction = Direction::Forward, double s0 = 0.0, double span = -1.0,
                                     bool require_inward = true)
{
    require_in_domain(chart, q0);
    if (q0.tau == 0.0)
        throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
    PhaseLayout L = chart.layout();
    Vec z0 = L.pack(q0);
    Vec v0 = hamilton_field(chart, z0);
    if (v0.norm() < 1e-14)
        throw Error(ErrorCode::DegenerateVelocity, "Hamilton vector field vanishes at the start point");
    int dir = static_cast<int>(direction);
    FaceId f0 = face_of(chart, q0.x);
    for (int j : f0.indices())
        if (require_inward && !(dir * f0.side(j) * v0[L.x(j)] > 0))
            throw Error(ErrorCode::InvalidArgument, "start point on a face must move strictly inward");

    DormandPrince dp([&chart](Vec const& z) { return hamilton_field(chart, z); }, cfg);
    std::function<void(Vec&)> post;
    if (cfg.rescale_fiber)
    {
        post = [&chart, L](Vec& z) {
            double tau = z[L.tau()];
            double g = tau * tau - principal_symbol(chart, z);
            if (g > 0)
                z.segment(L.half(), L.k + L.l) *= std::abs(tau) / std::sqrt(g);
        };
    }
    auto res = dp.run(z0, s0, dir, span > 0 ? span : cfg.max_time, detail::box_events(chart), post);

    InteriorSegment seg;
    seg.kind = SegmentKind::Interior;
    seg.s_start = s0;
    seg.s_end = res.s_end;
    seg.knots = std::move(res.knots);
    seg.dense = std::move(res.steps);
    if (res.stop == IntegrationResult::Stop::Horizon)
        seg.terminal = Terminal::TimeHorizon;
    else
    {
        auto [face, exit] = detail::classify_fired(chart, res.fired);
        if (exit)
            seg.terminal = Terminal::DomainExit;
        else
        {
            seg.terminal = Terminal::BoundaryHit;
            seg.hit_face = face;
        }
    }
    double p0 = principal_symbol(chart, z0);
    for (Knot const& kn : seg.knots)
        seg.max_drift = std::max(seg.max_drift, std::abs(principal_symbol(chart, kn.z) - p0));
    seg.drift_warning = seg.max_drift > cfg.p_drift_warn;
    return seg;
}

}  // namespace brokenray
