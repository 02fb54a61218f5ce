#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "boundary.hpp"
#include "dual.hpp"
#include "error.hpp"
#include "expression.hpp"
#include "geometry.hpp"
#include "hamiltonian.hpp"

namespace brokenray {

//---------------------------------------------------------------------------//
// Cutoffs
//---------------------------------------------------------------------------//
inline double chi0(double t) { return t > 0 ? std::exp(-1.0 / t) : 0.0; }
inline double dchi0(double t) { return t > 0 ? std::exp(-1.0 / t) / (t * t) : 0.0; }

namespace detail {

inline double bump(double s) { return (s > 0 && s < 1) ? std::exp(-1.0 / (s * (1.0 - s))) : 0.0; }

//! Cumulative integral of the bump on a uniform grid of [0, 1], one GK61 rule per cell.
struct BumpTable
{
    static constexpr int cells = 1024;
    std::vector<double> cum;

    BumpTable() : cum(cells + 1, 0.0)
    {
        using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
        for (int i = 0; i < cells; ++i)
            cum[static_cast<std::size_t>(i + 1)] =
                cum[static_cast<std::size_t>(i)] + GK::integrate(bump, double(i) / cells, double(i + 1) / cells, 0);
    }
};

inline BumpTable const& bump_table()
{
    static BumpTable const table;
    return table;
}

}  // namespace detail

/*!
 * Smooth step: 0 on (−∞, 0], 1 on [1, ∞), the normalized integral of
 * exp(−1/(s(1 − s))) in between.
 */
inline double chi1(double t)
{
    if (t <= 0)
        return 0.0;
    if (t >= 1)
        return 1.0;
    auto const& tb = detail::bump_table();
    int i = std::min(static_cast<int>(t * detail::BumpTable::cells), detail::BumpTable::cells - 1);
    double a = double(i) / detail::BumpTable::cells;
    double part = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(detail::bump, a, t, 0);
    return (tb.cum[static_cast<std::size_t>(i)] + part) / tb.cum.back();
}

inline double dchi1(double t) { return detail::bump(t) / detail::bump_table().cum.back(); }

//! χ2(u) = χ1((u + 2c1)/c1)·χ1((2c1 − u)/c1): 1 on [−c1, c1], supported in [−2c1, 2c1]
inline double chi2(double u, double c1) { return chi1((u + 2 * c1) / c1) * chi1((2 * c1 - u) / c1); }

inline double dchi2(double u, double c1)
{
    double a = (u + 2 * c1) / c1, b = (2 * c1 - u) / c1;
    return (dchi1(a) * chi1(b) - chi1(a) * dchi1(b)) / c1;
}

struct Cutoffs
{
    double chi0, dchi0, chi1, dchi1, chi2, dchi2;
};

inline Cutoffs cutoffs(double t, double c1 = 1.0)
{
    return {brokenray::chi0(t), brokenray::dchi0(t), brokenray::chi1(t),
            brokenray::dchi1(t), brokenray::chi2(t, c1), brokenray::dchi2(t, c1)};
}

//---------------------------------------------------------------------------//
// Parameters
//---------------------------------------------------------------------------//
struct CommutantParams
{
    CompressedPoint q0;
    double delta = 1e-3;
    double eps = 0.5;
    double A0 = 1.0;
    double c1 = 1.0;

    //! ε < 1 is required on the glancing sheet only; the hyperbolic threshold may exceed 1.
    void validate(bool glancing) const
    {
        if (!(delta > 0 && eps > 0 && A0 > 0 && c1 > 0))
            throw Error(ErrorCode::InvalidArgument, "commutant parameters must be positive");
        if (glancing && !(eps < 1))
            throw Error(ErrorCode::InvalidArgument, "glancing commutant needs eps < 1");
        if (q0.tau == 0.0)
            throw Error(ErrorCode::InvalidArgument, "reference tau must be nonzero");
    }
};

//---------------------------------------------------------------------------//
// Hyperbolic escape function
//---------------------------------------------------------------------------//
/*!
 * ω = |x|² + |y − y0|² + |t − t0|² + |ζ/τ − ζ0/τ0|² on a flat T*X state; the
 * same expression in b-coordinates since σ does not enter.
 */
template <class T>
T omega_hyp(PhaseLayout const& L, std::span<T const> z, CompressedPoint const& q0)
{
    T w(0.0);
    for (int j = 0; j < L.k; ++j)
        w += z[static_cast<std::size_t>(L.x(j))] * z[static_cast<std::size_t>(L.x(j))];
    for (int i = 0; i < L.l; ++i)
    {
        T dy = z[static_cast<std::size_t>(L.y(i))] - T(q0.y[i]);
        w += dy * dy;
    }
    T dt = z[static_cast<std::size_t>(L.t())] - T(q0.t);
    w += dt * dt;
    T tau = z[static_cast<std::size_t>(L.tau())];
    for (int i = 0; i < L.l; ++i)
    {
        T dz = z[static_cast<std::size_t>(L.zeta(i))] / tau - T(q0.zeta[i] / q0.tau);
        w += dz * dz;
    }
    return w;
}

inline double omega_hyp(BCotangentPoint const& q, CompressedPoint const& q0)
{
    if (q.tau == 0.0)
        throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
    double w = q.x.squaredNorm() + (q.y - q0.y).squaredNorm() + (q.t - q0.t) * (q.t - q0.t);
    w += (q.zeta / q.tau - q0.zeta / q0.tau).squaredNorm();
    return w;
}

//! φ = η + ω/(ε²δ) on a flat T*X state.
template <class T>
T phi_hyp(PhaseLayout const& L, std::span<T const> z, CommutantParams const& p)
{
    return eta<T>(L, z) + omega_hyp<T>(L, z, p.q0) / T(p.eps * p.eps * p.delta);
}

inline double eta_b(BCotangentPoint const& q) { return -q.sigma.sum() / std::abs(q.tau); }

inline double phi_hyp(BCotangentPoint const& q, CommutantParams const& p)
{
    return eta_b(q) + omega_hyp(q, p.q0) / (p.eps * p.eps * p.delta);
}

//! a = χ0(A0⁻¹(2 − φ/δ))·χ1(η/δ + 2)·χ2(|σ|²/τ²)
inline double a_hyp(BCotangentPoint const& q, CommutantParams const& p)
{
    if (q.tau == 0.0)
        throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
    double eta = eta_b(q);
    double phi = phi_hyp(q, p);
    double f0 = chi0((2.0 - phi / p.delta) / p.A0);
    if (f0 == 0.0)
        return 0.0;
    double f1 = chi1(eta / p.delta + 2.0);
    if (f1 == 0.0)
        return 0.0;
    return f0 * f1 * chi2(q.sigma.squaredNorm() / (q.tau * q.tau), p.c1);
}

//---------------------------------------------------------------------------//
// Sampling helpers
//---------------------------------------------------------------------------//
namespace detail {

/*!
 * Complete (x, y, t, ζ, τ) to a point of Char(P) with ξ along the unit
 * direction w: the positive root λ of g(λw) = τ². Returns false if none.
 */
inline bool characteristic_xi(Chart const& chart, Vec& z, Vec const& w)
{
    PhaseLayout L = chart.layout();
    for (int j = 0; j < L.k; ++j)
        z[L.xi(j)] = 0.0;
    double c = -principal_symbol(chart, z);  // ζBζ − τ²
    Vec z1 = z;
    for (int j = 0; j < L.k; ++j)
        z1[L.xi(j)] = w[j];
    Vec zm = z;
    for (int j = 0; j < L.k; ++j)
        zm[L.xi(j)] = -w[j];
    double tau2 = z[L.tau()] * z[L.tau()];
    // g(w) = a + 2b + (c + τ²), g(−w) = a − 2b + (c + τ²)
    double gp = tau2 - principal_symbol(chart, z1), gm = tau2 - principal_symbol(chart, zm);
    double g0 = c + tau2;
    double a = 0.5 * (gp + gm) - g0;
    double b = 0.25 * (gp - gm);
    double disc = b * b - a * c;
    if (!(a > 0) || disc < 0)
        return false;
    double lam = (-b + std::sqrt(disc)) / a;
    if (!(lam > 0))
        return false;
    for (int j = 0; j < L.k; ++j)
        z[L.xi(j)] = lam * w[j];
    return true;
}

inline Vec random_unit(std::mt19937_64& rng, int k)
{
    std::normal_distribution<double> nd;
    Vec w(k);
    do
    {
        for (int j = 0; j < k; ++j)
            w[j] = nd(rng);
    } while (w.norm() < 1e-12);
    return w / w.norm();
}

inline void require_corner_reference(Chart const& chart, CompressedPoint const& q0)
{
    FaceId full;
    for (int j = 0; j < chart.k(); ++j)
        full.add_lower(j);
    if (!(q0.face == full) || q0.y.size() != chart.l() || q0.zeta.size() != chart.l())
        throw Error(ErrorCode::InvalidArgument, "reference point must lie over x = 0 in this chart");
}

}  // namespace detail

//---------------------------------------------------------------------------//
// Hyperbolic positivity
//---------------------------------------------------------------------------//
struct SampleSpec
{
    int n_estimate = 10000;  //!< samples for the C1'' estimate
    int n_support = 10000;   //!< samples of supp(a) ∩ Char(P)
    long max_attempts = 20'000'000;
    std::uint64_t seed = 1;
};

struct HypBoundReport
{
    double c0 = 0.0;
    double c1_estimate = 0.0;  //!< C1'': max |τ⁻¹H_pω| / ω^{1/2}
    double eps_threshold = 0.0;  //!< 8 C1''/c0
    bool eps_ok = false;
    double min_hp_phi = std::numeric_limits<double>::infinity();
    double bound = 0.0;  //!< c0/4
    long n_support = 0;
    long attempts = 0;
    bool pass = false;
    std::optional<Vec> violation;
    Vec worst;  //!< state attaining min_hp_phi
};

class EpsilonTooSmallError : public Error
{
  public:
    EpsilonTooSmallError(double threshold, double eps, HypBoundReport report)
        : Error(ErrorCode::EpsilonTooSmall, "eps = " + std::to_string(eps) + " is not above the threshold 8 C1''/c0 = "
                                                + std::to_string(threshold)),
          threshold_(threshold), report_(std::move(report))
    {
    }
    double threshold() const noexcept { return threshold_; }
    HypBoundReport const& report() const noexcept { return report_; }

  private:
    double threshold_;
    HypBoundReport report_;
};

/*!
 * Sampled check of the hyperbolic positive-commutator estimate at q0 over
 * x = 0: estimate C1'' on Char(P) within 2εδ of q0, require ε > 8C1''/c0
 * with c0 = |τ0|⁻¹H_pη(q0) = 2(τ0² − ζ0·B(0, y0)ζ0)/τ0², then take the
 * minimum of |τ|⁻¹H_pφ over sampled supp(a) ∩ Char(P).
 */
inline HypBoundReport hp_phi_lower_bound(Chart const& chart, CommutantParams const& params, SampleSpec const& spec = {})
{
    params.validate(false);
    detail::require_corner_reference(chart, params.q0);
    PhaseLayout L = chart.layout();
    CompressedPoint const& q0 = params.q0;
    HypBoundReport rep;
    Classification cls = classify(chart, q0);
    if (cls.kind != PointKind::Hyperbolic)
        throw Error(ErrorCode::NotHyperbolic, "reference point is not hyperbolic");
    rep.c0 = eval_Hp_eta_boundary(chart, q0) / std::abs(q0.tau);
    rep.bound = rep.c0 / 4.0;
    double R = 2.0 * params.eps * params.delta;
    double tau = q0.tau / std::abs(q0.tau);

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0), um(-1.0, 1.0);
    auto sample_base = [&](Vec& z) {
        z = Vec::Zero(L.size());
        for (int j = 0; j < L.k; ++j)
            z[L.x(j)] = R * u01(rng);
        for (int i = 0; i < L.l; ++i)
        {
            z[L.y(i)] = q0.y[i] + R * um(rng);
            z[L.zeta(i)] = tau * (q0.zeta[i] / q0.tau + R * um(rng));
        }
        z[L.t()] = q0.t + R * um(rng);
        z[L.tau()] = tau;
        return chart.contains_base(z.segment(0, L.k), z.segment(L.k, L.l));
    };
    auto omega_fn = [&](std::span<Dual const> zd) { return omega_hyp<Dual>(L, zd, q0); };
    auto phi_fn = [&](std::span<Dual const> zd) { return phi_hyp<Dual>(L, zd, params); };

    // (1) C1''
    Vec z;
    int got = 0;
    for (long att = 0; got < spec.n_estimate && att < spec.max_attempts; ++att)
    {
        if (!sample_base(z) || !detail::characteristic_xi(chart, z, detail::random_unit(rng, L.k)))
            continue;
        std::span<double const> zs(z.data(), static_cast<std::size_t>(z.size()));
        double w = omega_hyp<double>(L, zs, q0);
        if (!(w > 0))
            continue;
        double hw = hp_derivative(chart, z, omega_fn) / std::abs(z[L.tau()]);
        rep.c1_estimate = std::max(rep.c1_estimate, std::abs(hw) / std::sqrt(w));
        ++got;
    }
    rep.eps_threshold = 8.0 * rep.c1_estimate / rep.c0;
    rep.eps_ok = params.eps > rep.eps_threshold;
    if (!rep.eps_ok)
        throw EpsilonTooSmallError(rep.eps_threshold, params.eps, rep);

    // (3) min |τ|⁻¹H_pφ on supp(a) ∩ Char(P)
    for (rep.attempts = 0; rep.n_support < spec.n_support && rep.attempts < spec.max_attempts; ++rep.attempts)
    {
        if (!sample_base(z) || !detail::characteristic_xi(chart, z, detail::random_unit(rng, L.k)))
            continue;
        CotangentPoint q = L.unpack(z);
        BCotangentPoint b = to_b_coords(q);
        double et = eta_b(b);
        if (!(et > -2.0 * params.delta) || !(phi_hyp(b, params) < 2.0 * params.delta))
            continue;
        if (!(a_hyp(b, params) > 0))
            continue;
        ++rep.n_support;
        double v = hp_derivative(chart, z, phi_fn) / std::abs(z[L.tau()]);
        if (v < rep.min_hp_phi)
        {
            rep.min_hp_phi = v;
            rep.worst = z;
        }
        if (v < rep.bound && !rep.violation)
            rep.violation = z;
    }
    if (rep.n_support == 0)
        throw Error(ErrorCode::EmptySupport, "no sampled point of Char(P) in the support of a");
    rep.pass = rep.eps_ok && rep.min_hp_phi >= rep.bound;
    return rep;
}

//---------------------------------------------------------------------------//
// Glancing escape function
//---------------------------------------------------------------------------//
/*!
 * Gliding curve through a glancing reference point, integrated once in both
 * directions over |s| ≤ span, with its vector field for chain-rule
 * derivatives of the matched point.
 */
class GlancingReference
{
  public:
    GlancingReference(Chart const& chart, CompressedPoint q0, double span = 1.0, IntegratorConfig cfg = {})
        : chart_(&chart), q0_(std::move(q0)), span_(span)
    {
        if (!(q0_.tau > 0))
            throw Error(ErrorCode::InvalidArgument, "glancing symbols use the sheet tau > 0");
        detail::require_corner_reference(chart, q0_);
        Classification cls = classify(chart, q0_);
        if (cls.kind != PointKind::Glancing)
            throw Error(ErrorCode::NotGlancing, "reference point is not glancing");
        cfg.max_time = span;
        fwd_ = glide(chart, q0_, cfg, {}, Direction::Forward, 0.0, span);
        bwd_ = glide(chart, q0_, cfg, {}, Direction::Backward, 0.0, span);
    }

    Chart const& chart() const noexcept { return *chart_; }
    CompressedPoint const& q0() const noexcept { return q0_; }

    //! State on the curve at flow parameter s.
    Vec curve(double s) const
    {
        Segment const& sg = s >= 0 ? fwd_ : bwd_;
        if (s < sg.s_min() || s > sg.s_max())
            throw Error(ErrorCode::OutOfRange, "matched parameter outside the reference curve");
        return sg.state_at(s);
    }

    Vec curve_velocity(Vec const& z) const { return glide_field(*chart_, q0_.face, z); }

    /*!
     * ω0 = Σ (y_i − y_i(s*))² + Σ (ζ_i/τ − ζ_i(s*)/τ0)², s* = (t − t0)/(2τ0).
     */
    template <class T>
    T omega0(std::span<T const> z) const
    {
        PhaseLayout L = chart_->layout();
        T s_star = (z[static_cast<std::size_t>(L.t())] - T(q0_.t)) / T(2.0 * q0_.tau);
        double sv = value_of(s_star);
        Vec c = curve(sv);
        Vec v = curve_velocity(c);
        T ds = s_star - T(sv);
        T tau = z[static_cast<std::size_t>(L.tau())];
        T w(0.0);
        for (int i = 0; i < L.l; ++i)
        {
            T yc = T(c[L.y(i)]) + T(v[L.y(i)]) * ds;
            T zc = T(c[L.zeta(i)]) + T(v[L.zeta(i)]) * ds;
            T dy = z[static_cast<std::size_t>(L.y(i))] - yc;
            T dz = z[static_cast<std::size_t>(L.zeta(i))] / tau - zc / T(q0_.tau);
            w += dy * dy + dz * dz;
        }
        return w;
    }

    //! ω = ω0 + |x|²
    template <class T>
    T omega(std::span<T const> z) const
    {
        PhaseLayout L = chart_->layout();
        T w = omega0<T>(z);
        for (int j = 0; j < L.k; ++j)
            w += z[static_cast<std::size_t>(L.x(j))] * z[static_cast<std::size_t>(L.x(j))];
        return w;
    }

  private:
    Chart const* chart_;
    CompressedPoint q0_;
    double span_;
    Segment fwd_;
    Segment bwd_;
};

//! φ = t − t0 + ω/(ε²δ)
template <class T>
T phi_gla(GlancingReference const& ref, std::span<T const> z, CommutantParams const& p)
{
    PhaseLayout L = ref.chart().layout();
    return z[static_cast<std::size_t>(L.t())] - T(ref.q0().t) + ref.omega<T>(z) / T(p.eps * p.eps * p.delta);
}

inline double omega_gla(GlancingReference const& ref, Vec const& z)
{
    return ref.omega<double>(std::span<double const>(z.data(), static_cast<std::size_t>(z.size())));
}

//! a = χ0(A0⁻¹(2 − φ/δ))·χ1((t − t0 + δ)/(εδ) + 1)·χ2(|σ|²/τ²), zero for τ ≤ 0.
inline double a_gla(GlancingReference const& ref, Vec const& z, CommutantParams const& p)
{
    PhaseLayout L = ref.chart().layout();
    double tau = z[L.tau()];
    if (!(tau > 0))
        return 0.0;
    double dt = z[L.t()] - ref.q0().t;
    double f1 = chi1((dt + p.delta) / (p.eps * p.delta) + 1.0);
    if (f1 == 0.0)
        return 0.0;
    double phi = phi_gla<double>(ref, std::span<double const>(z.data(), static_cast<std::size_t>(z.size())), p);
    double f0 = chi0((2.0 - phi / p.delta) / p.A0);
    if (f0 == 0.0)
        return 0.0;
    double s2 = 0.0;
    for (int j = 0; j < L.k; ++j)
        s2 += std::pow(z[L.x(j)] * z[L.xi(j)], 2);
    return f0 * f1 * chi2(s2 / (tau * tau), p.c1);
}

struct GlancingSupportReport
{
    long samples = 0;
    long in_support = 0;
    long in_dchi1_support = 0;
    long violations_t = 0;      //!< |t − t0| > 2δ on supp a
    long violations_omega = 0;  //!< ω > 4δ²ε² on supp a
    long violations_band = 0;   //!< t − t0 ∉ [−δ − εδ, −δ] on supp dχ1 within supp a
    double max_abs_dt = 0.0;
    double max_omega = 0.0;
    bool pass() const { return in_support > 0 && violations_t + violations_omega + violations_band == 0; }
};

/*!
 * Random samples around the reference curve (|t − t0| ≤ 3δ, base and ζ/τ
 * offsets up to 3εδ, arbitrary ξ) checked against the support bounds of a.
 */
inline GlancingSupportReport glancing_support_report(GlancingReference const& ref, CommutantParams const& p,
                                                     int n_samples = 10000, std::uint64_t seed = 1)
{
    p.validate(true);
    PhaseLayout L = ref.chart().layout();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0), um(-1.0, 1.0);
    GlancingSupportReport rep;
    double R = 3.0 * p.eps * p.delta;
    CompressedPoint const& q0 = ref.q0();
    for (int n = 0; n < n_samples; ++n)
    {
        Vec z = Vec::Zero(L.size());
        double dt = 3.0 * p.delta * um(rng);
        Vec c = ref.curve(dt / (2.0 * q0.tau));
        for (int j = 0; j < L.k; ++j)
        {
            z[L.x(j)] = R * u01(rng);
            z[L.xi(j)] = um(rng);
        }
        double tau = q0.tau * (0.5 + 1.5 * u01(rng));
        for (int i = 0; i < L.l; ++i)
        {
            z[L.y(i)] = c[L.y(i)] + R * um(rng);
            z[L.zeta(i)] = tau * (c[L.zeta(i)] / q0.tau + R * um(rng));
        }
        z[L.t()] = q0.t + dt;
        z[L.tau()] = tau;
        ++rep.samples;
        double a = a_gla(ref, z, p);
        if (!(a > 0))
            continue;
        ++rep.in_support;
        double w = omega_gla(ref, z);
        rep.max_abs_dt = std::max(rep.max_abs_dt, std::abs(dt));
        rep.max_omega = std::max(rep.max_omega, w);
        if (std::abs(dt) > 2.0 * p.delta)
            ++rep.violations_t;
        if (w > 4.0 * p.delta * p.delta * p.eps * p.eps)
            ++rep.violations_omega;
        double arg = (dt + p.delta) / (p.eps * p.delta) + 1.0;
        if (dchi1(arg) > 0)
        {
            ++rep.in_dchi1_support;
            if (dt < -p.delta - p.eps * p.delta || dt > -p.delta)
                ++rep.violations_band;
        }
    }
    return rep;
}

struct GridSpec
{
    int n = 5;                 //!< points per axis
    double radius = 0.05;      //!< half-width in y, t, ζ/τ; x ∈ [0, radius]
    double xi_radius = 0.05;   //!< ξ ∈ [−xi_radius, xi_radius]
};

struct GlancingEstimateReport
{
    long points = 0;
    double admissible_c = 0.0;      //!< max |τ⁻¹H_pω| / (ω^{1/2}(ω^{1/2} + |t − t0| + τ⁻²|p|))
    Vec worst;
    double on_curve_max_lhs = 0.0;  //!< max |τ⁻¹H_pω| at ω = 0 points
    double c_without_p = 0.0;       //!< same ratio with the |p| term dropped
    long ablation_violations = 0;   //!< points breaking the bound at admissible_c without |p|
};

/*!
 * Tensor grid around the reference point: x, y, t, ζ/τ and ξ offsets, τ = τ0.
 * Reports the smallest C with |τ⁻¹H_pω| ≤ C ω^{1/2}(ω^{1/2} + |t − t0| + τ⁻²|p|)
 * over the grid.
 */
inline GlancingEstimateReport hp_omega_glancing_estimate(GlancingReference const& ref, GridSpec const& g)
{
    if (g.n < 2)
        throw Error(ErrorCode::EmptyGrid, "grid needs at least two points per axis");
    Chart const& chart = ref.chart();
    PhaseLayout L = chart.layout();
    CompressedPoint const& q0 = ref.q0();
    int const dims = L.k + L.l + 1 + L.l + L.k;  // x, y, t, ζ, ξ
    std::vector<int> idx(static_cast<std::size_t>(dims), 0);
    auto node = [&](int i, bool half) {
        double u = static_cast<double>(i) / (g.n - 1);
        return half ? u : 2.0 * u - 1.0;
    };
    auto omega_fn = [&](std::span<Dual const> zd) { return ref.omega<Dual>(zd); };
    GlancingEstimateReport rep;
    struct Sample
    {
        double lhs, w, dt, p;
    };
    std::vector<Sample> samples;
    for (;;)
    {
        Vec z = Vec::Zero(L.size());
        int d = 0;
        for (int j = 0; j < L.k; ++j)
            z[L.x(j)] = g.radius * node(idx[static_cast<std::size_t>(d++)], true);
        double dt = g.radius * node(idx[static_cast<std::size_t>(L.k + L.l)], false);
        Vec c = ref.curve(dt / (2.0 * q0.tau));
        for (int i = 0; i < L.l; ++i)
            z[L.y(i)] = c[L.y(i)] + g.radius * node(idx[static_cast<std::size_t>(d++)], false);
        ++d;  // t
        for (int i = 0; i < L.l; ++i)
            z[L.zeta(i)] = c[L.zeta(i)] + q0.tau * g.radius * node(idx[static_cast<std::size_t>(d++)], false);
        for (int j = 0; j < L.k; ++j)
            z[L.xi(j)] = g.xi_radius * node(idx[static_cast<std::size_t>(d++)], false);
        z[L.t()] = q0.t + dt;
        z[L.tau()] = q0.tau;

        if (chart.contains_base(z.segment(0, L.k), z.segment(L.k, L.l)))
        {
            double tau = z[L.tau()];
            double lhs = std::abs(hp_derivative(chart, z, omega_fn)) / std::abs(tau);
            double w = omega_gla(ref, z);
            double p = principal_symbol(chart, z);
            ++rep.points;
            samples.push_back({lhs, w, dt, p});
            if (w == 0.0)
                rep.on_curve_max_lhs = std::max(rep.on_curve_max_lhs, lhs);
            else
            {
                double sw = std::sqrt(w);
                double rhs = sw * (sw + std::abs(dt) + std::abs(p) / (tau * tau));
                double ratio = lhs / rhs;
                if (ratio > rep.admissible_c)
                {
                    rep.admissible_c = ratio;
                    rep.worst = z;
                }
                rep.c_without_p = std::max(rep.c_without_p, lhs / (sw * (sw + std::abs(dt))));
            }
        }

        int a = 0;
        while (a < dims && ++idx[static_cast<std::size_t>(a)] == g.n)
            idx[static_cast<std::size_t>(a++)] = 0;
        if (a == dims)
            break;
    }
    if (rep.points == 0)
        throw Error(ErrorCode::EmptyGrid, "no grid point inside the chart");
    for (auto const& s : samples)
    {
        if (s.w == 0.0)
            continue;
        double sw = std::sqrt(s.w);
        if (s.lhs > rep.admissible_c * sw * (sw + std::abs(s.dt)) * (1.0 + 1e-12))
            ++rep.ablation_violations;
    }
    return rep;
}

//---------------------------------------------------------------------------//
// b-Poisson brackets
//---------------------------------------------------------------------------//
//! Variables of symbol expressions: x1.., y1.., t, sigma1.., zeta1.., tau.
inline std::vector<std::string> symbol_variable_names(int k, int l)
{
    std::vector<std::string> v;
    for (int j = 0; j < k; ++j)
        v.push_back("x" + std::to_string(j + 1));
    for (int i = 0; i < l; ++i)
        v.push_back("y" + std::to_string(i + 1));
    v.push_back("t");
    for (int j = 0; j < k; ++j)
        v.push_back("sigma" + std::to_string(j + 1));
    for (int i = 0; i < l; ++i)
        v.push_back("zeta" + std::to_string(i + 1));
    v.push_back("tau");
    return v;
}

namespace detail {

//! Gradient of the pullback f(x, y, t, xξ, ζ, τ) in T*X coordinates at z.
inline Vec pullback_gradient(Expression const& f, PhaseLayout const& L, Vec const& z)
{
    int n = L.size();
    Vec grad(n);
    std::vector<Dual> zd(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        zd[static_cast<std::size_t>(i)] = Dual(z[i]);
    for (int c = 0; c < n; ++c)
    {
        zd[static_cast<std::size_t>(c)].d = 1.0;
        // b-coordinates share the flat layout with σ_j in place of ξ_j
        for (int i = 0; i < n; ++i)
            b[static_cast<std::size_t>(i)] = zd[static_cast<std::size_t>(i)];
        for (int j = 0; j < L.k; ++j)
            b[static_cast<std::size_t>(L.xi(j))] = zd[static_cast<std::size_t>(L.x(j))] * zd[static_cast<std::size_t>(L.xi(j))];
        grad[c] = f.eval<Dual>(std::span<Dual const>(b)).d;
        zd[static_cast<std::size_t>(c)].d = 0.0;
    }
    return grad;
}

inline Vec b_gradient(Expression const& f, Vec const& b)
{
    int n = static_cast<int>(b.size());
    Vec grad(n);
    std::vector<Dual> bd(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        bd[static_cast<std::size_t>(i)] = Dual(b[i]);
    for (int c = 0; c < n; ++c)
    {
        bd[static_cast<std::size_t>(c)].d = 1.0;
        grad[c] = f.eval<Dual>(std::span<Dual const>(bd)).d;
        bd[static_cast<std::size_t>(c)].d = 0.0;
    }
    return grad;
}

inline Vec pack_b(PhaseLayout const& L, BCotangentPoint const& q)
{
    Vec b(L.size());
    b.segment(0, L.k) = q.x;
    b.segment(L.k, L.l) = q.y;
    b[L.t()] = q.t;
    b.segment(L.half(), L.k) = q.sigma;
    b.segment(L.half() + L.k, L.l) = q.zeta;
    b[L.tau()] = q.tau;
    return b;
}

//! A T*X lift of a b-point: ξ_j = σ_j/x_j, or 0 where x_j = 0.
inline Vec lift_b(PhaseLayout const& L, BCotangentPoint const& q)
{
    Vec z = pack_b(L, q);
    for (int j = 0; j < L.k; ++j)
        z[L.xi(j)] = q.x[j] != 0.0 ? q.sigma[j] / q.x[j] : 0.0;
    return z;
}

inline double poisson(PhaseLayout const& L, Vec const& ga, Vec const& gb)
{
    double acc = 0.0;
    int h = L.half();
    for (int i = 0; i < h; ++i)
        acc += ga[h + i] * gb[i] - ga[i] * gb[h + i];
    return acc;
}

}  // namespace detail

/*!
 * {a, b} of the pullbacks through ι, computed in T*X coordinates:
 * Σ ∂_ξ a ∂_x b − ∂_x a ∂_ξ b over all (base, fiber) pairs.
 */
inline double b_poisson_bracket(Expression const& a, Expression const& b, BCotangentPoint const& q)
{
    PhaseLayout L{static_cast<int>(q.x.size()), static_cast<int>(q.y.size())};
    Vec z = detail::lift_b(L, q);
    double r = detail::poisson(L, detail::pullback_gradient(a, L, z), detail::pullback_gradient(b, L, z));
    if (!std::isfinite(r))
        throw Error(ErrorCode::NonDifferentiable, "bracket not finite at the sample point");
    return r;
}

struct BracketReport
{
    double max_sigma = 0.0;  //!< max |{σ_j, a} − x_j ∂_{x_j}|_σ a|
    double max_x = 0.0;      //!< max |{x_j, a} + x_j ∂_{σ_j} a|
    long points = 0;
    double max_discrepancy() const { return std::max(max_sigma, max_x); }
};

//! Compare brackets with σ_j and x_j against the b-coordinate identities on a point set.
inline BracketReport bracket_identity_report(Expression const& a, int k, int l, std::vector<BCotangentPoint> const& grid)
{
    PhaseLayout L{k, l};
    auto names = symbol_variable_names(k, l);
    BracketReport rep;
    for (auto const& q : grid)
    {
        Vec z = detail::lift_b(L, q);
        Vec ga = detail::pullback_gradient(a, L, z);
        Vec gb = detail::b_gradient(a, detail::pack_b(L, q));
        if (!ga.allFinite() || !gb.allFinite())
            throw Error(ErrorCode::NonDifferentiable, "symbol not differentiable at a grid point");
        for (int j = 0; j < k; ++j)
        {
            Expression sj = Expression::parse(names[static_cast<std::size_t>(L.xi(j))], names);
            Expression xj = Expression::parse(names[static_cast<std::size_t>(L.x(j))], names);
            double lhs_s = detail::poisson(L, detail::pullback_gradient(sj, L, z), ga);
            double lhs_x = detail::poisson(L, detail::pullback_gradient(xj, L, z), ga);
            double rhs_s = q.x[j] * gb[L.x(j)];
            double rhs_x = -q.x[j] * gb[L.xi(j)];
            rep.max_sigma = std::max(rep.max_sigma, std::abs(lhs_s - rhs_s));
            rep.max_x = std::max(rep.max_x, std::abs(lhs_x - rhs_x));
        }
        ++rep.points;
    }
    return rep;
}

}  // namespace brokenray
