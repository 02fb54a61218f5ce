#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "dual.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "hamiltonian.hpp"
#include "integrator.hpp"

namespace brokenray {

struct BoundaryConfig
{
    //! glancing band half-width, relative to τ²
    double theta = 1e-6;
    //! threshold on d²x/ds² separating gliding from diffractive points
    double theta_g = 1e-8;
};

//---------------------------------------------------------------------------//
// Face quadric
//---------------------------------------------------------------------------//
/*!
 * Restriction of g to the lifts of a compressed point over face S.
 *
 * With u = ξ_S the free block fixed, g(u) = u·A_SS u + 2u·b + c. The lifts in
 * Char(P) are the ellipsoid (u − u0)·A_SS(u − u0) = radius2 around the center
 * u0 = −A_SS⁻¹b, and radius2 = τ² − (c − b·A_SS⁻¹b) is the signed margin.
 */
struct FaceQuadric
{
    FaceId face;
    std::vector<int> S;
    Mat A_SS;
    Vec center;
    double radius2 = 0.0;
};

namespace detail {

//! Solve M u = r for small SPD M (row-major n×n) on any scalar type.
template <class T>
std::vector<T> solve_spd(std::vector<T> M, std::vector<T> r, int n)
{
    for (int c = 0; c < n; ++c)
    {
        T piv = M[static_cast<std::size_t>(c * n + c)];
        for (int i = c + 1; i < n; ++i)
        {
            T f = M[static_cast<std::size_t>(i * n + c)] / piv;
            for (int j = c; j < n; ++j)
                M[static_cast<std::size_t>(i * n + j)] -= f * M[static_cast<std::size_t>(c * n + j)];
            r[static_cast<std::size_t>(i)] -= f * r[static_cast<std::size_t>(c)];
        }
    }
    std::vector<T> u(static_cast<std::size_t>(n));
    for (int i = n - 1; i >= 0; --i)
    {
        T acc = r[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < n; ++j)
            acc -= M[static_cast<std::size_t>(i * n + j)] * u[static_cast<std::size_t>(j)];
        u[static_cast<std::size_t>(i)] = acc / M[static_cast<std::size_t>(i * n + i)];
    }
    return u;
}

}  // namespace detail

//! Center u0 = −A_SS⁻¹(A_SF ξ_F + C_S ζ) at the base point of a flat state.
template <class T>
std::vector<T> quadric_center(Chart const& chart, std::vector<int> const& S, std::span<T const> z)
{
    PhaseLayout L = chart.layout();
    int const k = L.k, l = L.l, m = static_cast<int>(S.size());
    MetricArrays<T> a(chart, z);
    std::vector<char> in_s(static_cast<std::size_t>(k), 0);
    for (int j : S)
        in_s[static_cast<std::size_t>(j)] = 1;
    std::vector<T> M(static_cast<std::size_t>(m * m)), b(static_cast<std::size_t>(m));
    for (int p = 0; p < m; ++p)
    {
        int i = S[static_cast<std::size_t>(p)];
        for (int q = 0; q < m; ++q)
            M[static_cast<std::size_t>(p * m + q)] = a.A[static_cast<std::size_t>(i * k + S[static_cast<std::size_t>(q)])];
        T acc(0.0);
        for (int j = 0; j < k; ++j)
            if (!in_s[static_cast<std::size_t>(j)])
                acc += a.A[static_cast<std::size_t>(i * k + j)] * z[static_cast<std::size_t>(L.xi(j))];
        for (int j = 0; j < l; ++j)
            acc += a.C[static_cast<std::size_t>(i * l + j)] * z[static_cast<std::size_t>(L.zeta(j))];
        b[static_cast<std::size_t>(p)] = -acc;
    }
    return detail::solve_spd<T>(std::move(M), std::move(b), m);
}

//! Quadric of lifts at the base point and fibers of a flat state (face entries of ξ ignored).
inline FaceQuadric face_quadric(Chart const& chart, FaceId face, Vec const& z)
{
    PhaseLayout L = chart.layout();
    FaceQuadric fq;
    fq.face = face;
    fq.S = face.indices();
    int m = static_cast<int>(fq.S.size());
    std::span<double const> zs(z.data(), static_cast<std::size_t>(z.size()));
    auto c = quadric_center<double>(chart, fq.S, zs);
    fq.center = Vec(m);
    for (int p = 0; p < m; ++p)
        fq.center[p] = c[static_cast<std::size_t>(p)];
    MetricAt ma = chart.metric_at(z.segment(0, L.k), z.segment(L.k, L.l));
    fq.A_SS = Mat(m, m);
    for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q)
            fq.A_SS(p, q) = ma.A(fq.S[static_cast<std::size_t>(p)], fq.S[static_cast<std::size_t>(q)]);
    Vec zc = z;
    for (int p = 0; p < m; ++p)
        zc[L.xi(fq.S[static_cast<std::size_t>(p)])] = fq.center[p];
    fq.radius2 = principal_symbol(chart, zc);
    return fq;
}

//! Flat state of the lift of c with the given face-normal components.
inline Vec lift_state(Chart const& chart, CompressedPoint const& c, Vec const& xi_face)
{
    return chart.layout().pack(lift(chart, c, xi_face));
}

inline FaceQuadric face_quadric(Chart const& chart, CompressedPoint const& c)
{
    return face_quadric(chart, c.face, lift_state(chart, c, Vec::Zero(c.face.codim())));
}

//! Compressed image of q with an explicitly given face.
inline CompressedPoint compress_onto(Chart const& chart, CotangentPoint const& q, FaceId face)
{
    CompressedPoint c;
    c.face = face;
    int nfree = chart.k() - face.codim();
    c.x_free.resize(nfree);
    c.xi_free.resize(nfree);
    int m = 0;
    for (int j = 0; j < chart.k(); ++j)
    {
        if (face.contains(j))
            continue;
        c.x_free[m] = q.x[j];
        c.xi_free[m] = q.xi[j];
        ++m;
    }
    c.y = q.y;
    c.t = q.t;
    c.zeta = q.zeta;
    c.tau = q.tau;
    return c;
}

//---------------------------------------------------------------------------//
// Classification
//---------------------------------------------------------------------------//
enum class PointKind { Elliptic, Glancing, Hyperbolic };

inline std::string_view to_string(PointKind k)
{
    switch (k)
    {
        case PointKind::Elliptic: return "elliptic";
        case PointKind::Glancing: return "glancing";
        case PointKind::Hyperbolic: return "hyperbolic";
    }
    return "?";
}

struct Classification
{
    PointKind kind = PointKind::Hyperbolic;
    double margin = 0.0;
    double tolerance = 0.0;  //!< θ·τ²
};

inline PointKind kind_of_margin(double margin, double band)
{
    if (margin < -band)
        return PointKind::Elliptic;
    if (margin > band)
        return PointKind::Hyperbolic;
    return PointKind::Glancing;
}

//! Classification of a compressed boundary point by the margin of its lift quadric.
inline Classification classify(Chart const& chart, CompressedPoint const& q, BoundaryConfig const& bc = {})
{
    if (q.face.empty())
        throw Error(ErrorCode::InteriorPoint, "classification needs a boundary point");
    if (q.k() != chart.k() || q.l() != chart.l())
        throw Error(ErrorCode::ChartMismatch, "point dimensions do not match the chart");
    FaceQuadric fq = face_quadric(chart, q);
    Classification c;
    c.margin = fq.radius2;
    c.tolerance = bc.theta * q.tau * q.tau;
    c.kind = kind_of_margin(c.margin, c.tolerance);
    return c;
}

//---------------------------------------------------------------------------//
// Lifts
//---------------------------------------------------------------------------//
struct LiftSet
{
    FaceId face;
    double radius2 = 0.0;
    Mat quadric;  //!< A_SS
    Vec center;
    std::vector<Vec> lifts;  //!< face-normal components, ordered like face.indices()
};

namespace detail {

//! Deterministic near-uniform points on the unit sphere in R^m.
inline std::vector<Vec> sphere_points(int m, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<Vec> pts;
    double const two_pi = 2.0 * std::numbers::pi;
    if (m == 2)
    {
        double off = u01(rng);
        for (int i = 0; i < n; ++i)
        {
            double th = two_pi * (i + off) / n;
            pts.push_back(Vec{{std::cos(th), std::sin(th)}});
        }
    }
    else if (m == 3)
    {
        double off = two_pi * u01(rng);
        double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i)
        {
            double zc = 1.0 - 2.0 * (i + 0.5) / n;
            double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
            double th = golden * i + off;
            pts.push_back(Vec{{r * std::cos(th), r * std::sin(th), zc}});
        }
    }
    else
    {
        std::normal_distribution<double> nd;
        for (int i = 0; i < n; ++i)
        {
            Vec w(m);
            for (int j = 0; j < m; ++j)
                w[j] = nd(rng);
            pts.push_back(w / w.norm());
        }
    }
    return pts;
}

inline void append_unique(std::vector<Vec>& out, Vec const& v)
{
    for (Vec const& u : out)
        if ((u - v).norm() <= 1e-12 * (1.0 + v.norm()))
            return;
    out.push_back(v);
}

}  // namespace detail

/*!
 * Representative lifts of q to Char(P).
 *
 * Codimension 1: the roots u0 ± sqrt(radius2 / A_11), or u0 alone in the
 * glancing band. Higher codimension: n_samples points of the lift ellipsoid,
 * mapped from the unit sphere through the Cholesky factor of A_SS. An incoming
 * lift, if given, is always included.
 */
inline LiftSet lift_set(Chart const& chart, CompressedPoint const& q, int n_samples, std::uint64_t seed = 0,
                        std::optional<Vec> const& incoming = std::nullopt, BoundaryConfig const& bc = {})
{
    if (q.face.empty())
        throw Error(ErrorCode::InteriorPoint, "lift set needs a boundary point");
    FaceQuadric fq = face_quadric(chart, q);
    Classification cls;
    cls.margin = fq.radius2;
    cls.kind = kind_of_margin(fq.radius2, bc.theta * q.tau * q.tau);
    if (cls.kind == PointKind::Elliptic)
        throw Error(ErrorCode::EllipticFace, "no real lifts over an elliptic point");
    if (n_samples < 1)
        throw Error(ErrorCode::InvalidArgument, "n_samples must be positive");
    LiftSet ls;
    ls.face = q.face;
    ls.radius2 = fq.radius2;
    ls.quadric = fq.A_SS;
    ls.center = fq.center;
    int m = q.face.codim();
    if (cls.kind == PointKind::Glancing)
        ls.lifts.push_back(fq.center);
    else if (m == 1)
    {
        double r = std::sqrt(fq.radius2 / fq.A_SS(0, 0));
        ls.lifts.push_back(fq.center + Vec::Constant(1, r));
        ls.lifts.push_back(fq.center - Vec::Constant(1, r));
    }
    else
    {
        Eigen::LLT<Mat> llt(fq.A_SS);
        double r = std::sqrt(fq.radius2);
        for (Vec const& w : detail::sphere_points(m, n_samples, seed))
        {
            Vec u = fq.center + r * llt.matrixU().solve(w);
            detail::append_unique(ls.lifts, u);
        }
    }
    if (incoming)
        detail::append_unique(ls.lifts, *incoming);
    return ls;
}

//---------------------------------------------------------------------------//
// Reflection
//---------------------------------------------------------------------------//
struct BranchRule
{
    enum class Kind { Specular, All };
    Kind kind = Kind::Specular;
    int n = 0;

    static BranchRule specular() { return {Kind::Specular, 0}; }
    static BranchRule all(int n) { return {Kind::All, n}; }

    std::string to_string() const { return kind == Kind::Specular ? "specular" : "all:" + std::to_string(n); }

    static BranchRule parse(std::string const& s)
    {
        if (s == "specular")
            return specular();
        if (s.rfind("all:", 0) == 0)
        {
            std::size_t used = 0;
            int n = 0;
            try
            {
                n = std::stoi(s.substr(4), &used);
            }
            catch (std::exception const&)
            {
                used = 0;
            }
            if (used == s.size() - 4 && n > 0)
                return all(n);
        }
        throw Error(ErrorCode::InvalidArgument, "branch rule must be 'specular' or 'all:N' with N > 0");
    }
};

//! Face-normal components of ξ at a flat state.
inline Vec face_components(PhaseLayout const& L, FaceId face, Vec const& z)
{
    auto S = face.indices();
    Vec u(static_cast<int>(S.size()));
    for (std::size_t p = 0; p < S.size(); ++p)
        u[static_cast<int>(p)] = z[L.xi(S[p])];
    return u;
}

inline Vec with_face_components(PhaseLayout const& L, FaceId face, Vec z, Vec const& u)
{
    auto S = face.indices();
    for (std::size_t p = 0; p < S.size(); ++p)
        z[L.xi(S[p])] = u[static_cast<int>(p)];
    return z;
}

//! True if the velocity at z points strictly into the domain on every face index.
inline bool leaves_face(Chart const& chart, FaceId face, Vec const& z, double dir = 1.0)
{
    Vec v = hamilton_field(chart, z);
    for (int j : face.indices())
        if (!(dir * face.side(j) * v[chart.layout().x(j)] > 0.0))
            return false;
    return true;
}

/*!
 * Outgoing continuations of an arriving point at a hyperbolic face.
 *
 * The base point is kept as landed; the quadric is evaluated there so that p
 * is preserved to roundoff. Specular reflects the face-normal block through
 * the quadric center (ξ_S → −ξ_S when the center is 0). BranchAll keeps every
 * sampled lift that strictly leaves all faces. `dir` = −1 treats the flow as
 * running backward.
 */
inline std::vector<CotangentPoint> reflect(Chart const& chart, CotangentPoint const& q_in, FaceId face, BranchRule rule,
                                           std::uint64_t seed = 0, BoundaryConfig const& bc = {}, int dir = 1)
{
    if (face.empty())
        throw Error(ErrorCode::InteriorPoint, "reflection needs a boundary point");
    PhaseLayout L = chart.layout();
    Vec z = L.pack(q_in);
    FaceQuadric fq = face_quadric(chart, face, z);
    if (kind_of_margin(fq.radius2, bc.theta * q_in.tau * q_in.tau) != PointKind::Hyperbolic)
        throw Error(ErrorCode::NotHyperbolic, "reflection needs a hyperbolic point");
    Vec u_in = face_components(L, face, z);
    std::vector<CotangentPoint> out;
    if (rule.kind == BranchRule::Kind::Specular)
    {
        Vec zo = with_face_components(L, face, z, 2.0 * fq.center - u_in);
        if (!leaves_face(chart, face, zo, dir))
            throw Error(ErrorCode::NoOutgoingLift, "specular lift does not leave every face");
        out.push_back(L.unpack(zo));
        return out;
    }
    // sample at the landed base point rather than the snapped one
    std::vector<Vec> lifts;
    int m = face.codim();
    if (m == 1)
    {
        double r = std::sqrt(fq.radius2 / fq.A_SS(0, 0));
        lifts = {fq.center + Vec::Constant(1, r), fq.center - Vec::Constant(1, r)};
    }
    else
    {
        Eigen::LLT<Mat> llt(fq.A_SS);
        double r = std::sqrt(fq.radius2);
        for (Vec const& w : detail::sphere_points(m, rule.n, seed))
            detail::append_unique(lifts, fq.center + r * llt.matrixU().solve(w));
    }
    detail::append_unique(lifts, u_in);
    std::vector<Vec> kept;
    for (Vec const& u : lifts)
    {
        Vec zo = with_face_components(L, face, z, u);
        if (leaves_face(chart, face, zo, dir))
            detail::append_unique(kept, u);
    }
    if (kept.empty())
        throw Error(ErrorCode::NoOutgoingLift, "no sampled lift leaves every face");
    for (Vec const& u : kept)
        out.push_back(L.unpack(with_face_components(L, face, z, u)));
    return out;
}

inline std::vector<CotangentPoint> reflect(Chart const& chart, CotangentPoint const& q_in, BranchRule rule,
                                           std::uint64_t seed = 0, BoundaryConfig const& bc = {})
{
    return reflect(chart, q_in, face_of(chart, q_in.x), rule, seed, bc);
}

//---------------------------------------------------------------------------//
// Glancing points
//---------------------------------------------------------------------------//
enum class GlideKind { Gliding, Diffractive, Undetermined };

inline std::string_view to_string(GlideKind k)
{
    switch (k)
    {
        case GlideKind::Gliding: return "gliding";
        case GlideKind::Diffractive: return "diffractive";
        case GlideKind::Undetermined: return "undetermined";
    }
    return "?";
}

struct GlancingKind
{
    GlideKind kind = GlideKind::Undetermined;
    double second_derivative = 0.0;
};

//! Flat state with x_S on the walls and ξ_S at the quadric center.
inline Vec canonical_lift(Chart const& chart, FaceId face, Vec z)
{
    PhaseLayout L = chart.layout();
    auto S = face.indices();
    for (int j : S)
        z[L.x(j)] = face.side(j) > 0 ? 0.0 : chart.domain().x_max[j];
    auto c = quadric_center<double>(chart, S, std::span<double const>(z.data(), static_cast<std::size_t>(z.size())));
    for (std::size_t p = 0; p < S.size(); ++p)
        z[L.xi(S[p])] = c[p];
    return z;
}

//! Largest inward acceleration side_j·d²x_j/ds² over the face, at a canonical lift.
inline double inward_acceleration(Chart const& chart, FaceId face, Vec const& zc)
{
    Vec v = hamilton_field(chart, zc);
    double best = -std::numeric_limits<double>::infinity();
    for (int j : face.indices())
    {
        double a = directional_derivative(zc, v, [&](std::span<Dual const> zd) {
            return velocity_x<Dual>(chart, zd, j);
        });
        best = std::max(best, face.side(j) * a);
    }
    return best;
}

inline GlideKind glide_kind_of(double sd, double theta_g)
{
    if (sd > theta_g)
        return GlideKind::Diffractive;
    if (sd < -theta_g)
        return GlideKind::Gliding;
    return GlideKind::Undetermined;
}

/*!
 * Gliding/diffractive type of a glancing point on a codimension-1 face:
 * the H_p-derivative of dx_j along the unique lift, signed inward.
 */
inline GlancingKind glancing_type(Chart const& chart, CompressedPoint const& q, BoundaryConfig const& bc = {})
{
    Classification cls = classify(chart, q, bc);
    if (cls.kind != PointKind::Glancing)
        throw Error(ErrorCode::NotGlancing, "point is not glancing");
    if (q.face.codim() >= 2)
        throw Error(ErrorCode::CornerGlancing, "glancing point on a corner");
    Vec zc = canonical_lift(chart, q.face, lift_state(chart, q, Vec::Zero(1)));
    GlancingKind g;
    g.second_derivative = inward_acceleration(chart, q.face, zc);
    g.kind = glide_kind_of(g.second_derivative, bc.theta_g);
    return g;
}

//---------------------------------------------------------------------------//
// Gliding flow
//---------------------------------------------------------------------------//
/*!
 * Gliding vector field on face S: H_p at the canonical lift with x_S frozen.
 * The ξ_S entries follow the quadric center, d/ds u0 = ∇u0 · H_p, so every
 * state stays on its canonical lift. On a codimension-1 face with C(0, y) = 0
 * this is 2τ∂_t − H_h with h = ζ·B(0, y)ζ.
 */
inline Vec glide_field(Chart const& chart, FaceId face, Vec const& z_in)
{
    PhaseLayout L = chart.layout();
    auto S = face.indices();
    Vec z = canonical_lift(chart, face, z_in);
    Vec v = hamilton_field(chart, z);
    for (int j : S)
    {
        v[L.x(j)] = 0.0;
        v[L.xi(j)] = 0.0;
    }
    std::vector<Dual> zd(static_cast<std::size_t>(z.size()));
    for (int i = 0; i < z.size(); ++i)
        zd[static_cast<std::size_t>(i)] = Dual(z[i], v[i]);
    auto c = quadric_center<Dual>(chart, S, std::span<Dual const>(zd));
    for (std::size_t p = 0; p < S.size(); ++p)
        v[L.xi(S[p])] = c[p].d;
    return v;
}

//! Signed margin τ² − h_face at a state over the face.
inline double glide_margin(Chart const& chart, FaceId face, Vec const& z)
{
    return principal_symbol(chart, canonical_lift(chart, face, z));
}

/*!
 * Integrate the gliding flow from a glancing point.
 *
 * Stops when the point turns diffractive (Diffractive), when the margin leaves
 * the glancing band (BandExit), on reaching another wall (BoundaryHit), on
 * leaving the chart box, or at the horizon.
 */
inline Segment glide(Chart const& chart, CompressedPoint const& q0, IntegratorConfig const& cfg,
                     BoundaryConfig const& bc = {}, Direction direction = Direction::Forward, double s0 = 0.0,
                     double span = -1.0)
{
    Classification cls = classify(chart, q0, bc);
    if (cls.kind != PointKind::Glancing)
        throw Error(ErrorCode::NotGlancing, "glide needs a glancing point");
    if (q0.tau == 0.0)
        throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
    PhaseLayout L = chart.layout();
    FaceId face = q0.face;
    auto S = face.indices();
    Vec z0 = canonical_lift(chart, face, lift_state(chart, q0, Vec::Zero(face.codim())));
    double band = bc.theta * q0.tau * q0.tau;
    int dir = static_cast<int>(direction);

    std::vector<EventFunction> events;
    for (EventFunction& e : detail::box_events(chart))
    {
        bool frozen = false;
        for (int j : S)
            if (e.tag == j || e.tag == 100 + j)
                frozen = true;
        if (!frozen)
            events.push_back(std::move(e));
    }
    events.push_back({[&chart, face, band](Vec const& z) {
                          return band - std::abs(glide_margin(chart, face, z));
                      },
                      500});
    double theta_g = bc.theta_g;
    events.push_back({[&chart, face, theta_g](Vec const& z) {
                          return theta_g - inward_acceleration(chart, face, canonical_lift(chart, face, z));
                      },
                      501});

    DormandPrince dp([&chart, face](Vec const& z) { return glide_field(chart, face, z); }, cfg);
    auto res = dp.run(z0, s0, dir, span > 0 ? span : cfg.max_time, events);

    Segment seg;
    seg.kind = SegmentKind::Gliding;
    seg.face = face;
    seg.s_start = s0;
    seg.s_end = res.s_end;
    seg.knots = std::move(res.knots);
    seg.dense = std::move(res.steps);
    if (res.stop == IntegrationResult::Stop::Horizon)
        seg.terminal = Terminal::TimeHorizon;
    else
    {
        std::vector<int> box;
        bool band_exit = false, diffractive = false;
        for (int tag : res.fired)
        {
            if (tag == 500)
                band_exit = true;
            else if (tag == 501)
                diffractive = true;
            else
                box.push_back(tag);
        }
        auto [hit, exit] = detail::classify_fired(chart, box);
        if (exit)
            seg.terminal = Terminal::DomainExit;
        else if (!hit.empty())
        {
            seg.terminal = Terminal::BoundaryHit;
            seg.hit_face = hit;
        }
        else if (band_exit)
            seg.terminal = Terminal::BandExit;
        else if (diffractive)
            seg.terminal = Terminal::Diffractive;
        else
            seg.terminal = Terminal::Handoff;
    }
    double m0 = glide_margin(chart, face, z0);
    for (Knot const& kn : seg.knots)
        seg.max_drift = std::max(seg.max_drift, std::abs(glide_margin(chart, face, kn.z) - m0));
    seg.drift_warning = seg.max_drift > cfg.p_drift_warn;
    return seg;
}

}  // namespace brokenray
