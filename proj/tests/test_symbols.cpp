// Cutoffs, commutant symbols and b-Poisson brackets.
#include <gtest/gtest.h>

#include <random>

#include "brokenray/cli.hpp"
#include "helpers.hpp"

using namespace brokenray;
using namespace testing_support;

namespace {

// reference values from 40-digit quadrature of exp(−1/(s(1−s)))
constexpr double bump_mass = 0.00702985840660965623924127053035;
constexpr double chi1_quarter = 0.0317549577276377763857885065971;
constexpr double chi1_tenth = 0.0000180978653038547026349176079496;

CommutantParams params_at(double zeta, double delta, double eps)
{
    CommutantParams p;
    p.q0 = boundary_point(zeta);
    p.delta = delta;
    p.eps = eps;
    return p;
}

BCotangentPoint bpoint(double x, double y, double t, double sigma, double zeta, double tau)
{
    BCotangentPoint q;
    q.x = v1(x);
    q.y = v1(y);
    q.t = t;
    q.sigma = v1(sigma);
    q.zeta = v1(zeta);
    q.tau = tau;
    return q;
}

ErrorCode code_of(auto&& f)
{
    try
    {
        f();
    }
    catch (Error const& e)
    {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::ParseError;
}

}  // namespace

TEST(Cutoffs, BumpMassAndChi1MatchHighPrecisionQuadrature)
{
    EXPECT_NEAR(detail::bump_table().cum.back(), bump_mass, 1e-17);
    EXPECT_NEAR(chi1(0.25), chi1_quarter, 1e-15);
    EXPECT_NEAR(chi1(0.1), chi1_tenth, 1e-17);
    EXPECT_NEAR(chi1(0.5), 0.5, 1e-15);
    EXPECT_EQ(chi1(-0.3), 0.0);
    EXPECT_EQ(chi1(0.0), 0.0);
    EXPECT_EQ(chi1(1.0), 1.0);
    EXPECT_EQ(chi1(4.0), 1.0);
}

TEST(Cutoffs, Chi1SymmetryAndMonotonicityProperty)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i)
    {
        double t = u(rng), s = u(rng);
        EXPECT_NEAR(chi1(t) + chi1(1 - t), 1.0, 2e-15) << t;
        if (s < t)
            EXPECT_LE(chi1(s), chi1(t));
    }
}

TEST(Cutoffs, DerivativesMatchFiniteDifferences)
{
    double h = 1e-6;
    for (double t : {0.05, 0.2, 0.5, 0.77, 0.93})
    {
        EXPECT_NEAR(dchi1(t), (chi1(t + h) - chi1(t - h)) / (2 * h), 1e-7) << t;
        EXPECT_NEAR(dchi0(t), (chi0(t + h) - chi0(t - h)) / (2 * h), 1e-7) << t;
    }
    EXPECT_DOUBLE_EQ(chi0(0.5), std::exp(-2.0));
    EXPECT_EQ(chi0(0.0), 0.0);
    EXPECT_EQ(dchi0(-1.0), 0.0);
    for (double u : {-1.7, -1.2, 1.3, 1.9})
        EXPECT_NEAR(dchi2(u, 1.0), (chi2(u + h, 1.0) - chi2(u - h, 1.0)) / (2 * h), 1e-7) << u;
}

TEST(Cutoffs, Chi2PlateausAndSupport)
{
    for (double c1 : {0.5, 1.0, 2.0})
    {
        for (double f : {-1.0, -0.4, 0.0, 0.9, 1.0})
            EXPECT_EQ(chi2(f * c1, c1), 1.0);
        for (double f : {-3.0, -2.0, 2.0, 2.5})
            EXPECT_EQ(chi2(f * c1, c1), 0.0);
        double mid = chi2(1.5 * c1, c1);
        EXPECT_GT(mid, 0.0);
        EXPECT_LT(mid, 1.0);
        EXPECT_DOUBLE_EQ(mid, chi2(-1.5 * c1, c1));
    }
    Cutoffs c = cutoffs(0.5);
    EXPECT_DOUBLE_EQ(c.chi1, chi1(0.5));
    EXPECT_DOUBLE_EQ(c.chi2, 1.0);
}

TEST(Hyperbolic, SymbolAtReferencePoint)
{
    // η = ω = φ = 0 and σ = 0: a = χ0(2/A0)·χ1(2)·χ2(0) = exp(−A0/2)
    for (double A0 : {0.5, 1.0, 3.0})
    {
        CommutantParams p = params_at(0.3, 1e-3, 30.0);
        p.A0 = A0;
        EXPECT_DOUBLE_EQ(a_hyp(bpoint(0, 0, 0, 0, 0.3, 1.0), p), std::exp(-A0 / 2));
    }
    CommutantParams p = params_at(0.3, 1e-3, 30.0);
    // η = −σ/τ below −2δ switches χ1 off
    EXPECT_EQ(a_hyp(bpoint(0, 0, 0, 0.003, 0.3, 1.0), p), 0.0);
    // far away in t switches χ0 off
    EXPECT_EQ(a_hyp(bpoint(0, 0, 5.0, 0, 0.3, 1.0), p), 0.0);
    EXPECT_DOUBLE_EQ(omega_hyp(bpoint(0.1, 0.2, 0.3, 9.0, 0.6, 2.0), p.q0), 0.01 + 0.04 + 0.09 + 0.0);
    EXPECT_DOUBLE_EQ(eta_b(bpoint(0.1, 0, 0, 0.4, 0, -2.0)), -0.2);
}

TEST(Hyperbolic, FlatHalfPlaneEstimates)
{
    // flat face: c0 = 2 and C1'' = 4√2
    Chart c = flat_chart(1, 1, 2.0);
    HypBoundReport rep = hp_phi_lower_bound(c, params_at(0.0, 1e-3, 30.0));
    EXPECT_DOUBLE_EQ(rep.c0, 2.0);
    EXPECT_NEAR(rep.c1_estimate, 4 * std::sqrt(2.0), 0.02 * 4 * std::sqrt(2.0));
    EXPECT_LE(rep.c1_estimate, 4 * std::sqrt(2.0) + 1e-9);
    EXPECT_NEAR(rep.eps_threshold, 16 * std::sqrt(2.0), 0.5);
    EXPECT_TRUE(rep.pass);
    EXPECT_GE(rep.min_hp_phi, rep.bound);
    EXPECT_GT(rep.n_support, 0);
}

TEST(Hyperbolic, EpsilonBelowThresholdIsRejected)
{
    Chart c = flat_chart(1, 1, 2.0);
    try
    {
        (void)hp_phi_lower_bound(c, params_at(0.0, 1e-3, 10.0));
        FAIL();
    }
    catch (EpsilonTooSmallError const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::EpsilonTooSmall);
        EXPECT_NEAR(e.threshold(), 16 * std::sqrt(2.0), 0.5);
        EXPECT_FALSE(e.report().eps_ok);
    }
}

TEST(Hyperbolic, ErrorCases)
{
    Chart c = flat_chart(1, 1, 2.0);
    SampleSpec none;
    none.max_attempts = 0;
    EXPECT_EQ(code_of([&] { (void)hp_phi_lower_bound(c, params_at(0.0, 1e-3, 30.0), none); }),
              ErrorCode::EmptySupport);
    EXPECT_EQ(code_of([&] { (void)hp_phi_lower_bound(c, params_at(1.0, 1e-3, 30.0)); }), ErrorCode::NotHyperbolic);
    EXPECT_EQ(code_of([&] { (void)hp_phi_lower_bound(c, params_at(0.0, -1.0, 30.0)); }),
              ErrorCode::InvalidArgument);
    CommutantParams off = params_at(0.0, 1e-3, 30.0);
    off.q0.face = FaceId{};
    off.q0.x_free = v1(0.5);
    off.q0.xi_free = v1(0.0);
    EXPECT_EQ(code_of([&] { (void)hp_phi_lower_bound(c, off); }), ErrorCode::InvalidArgument);
}

TEST(Glancing, ReferenceCurveOnFlatFace)
{
    // flat face: the glide curve is y = y0 − 2s with ζ fixed, so
    // ω0 = (y + (t − t0))² + (ζ/τ − 1)²
    Chart c = flat_chart(1, 1, 2.0);
    GlancingReference ref(c, boundary_point(1.0), 1.0);
    Vec z = ref.curve(0.4);
    EXPECT_NEAR(z[1], -0.8, 1e-13);
    EXPECT_NEAR(z[2], 0.8, 1e-13);
    PhaseLayout L = c.layout();
    Vec q = L.pack(point(v1(0.01), v1(0.3), 0.2, v1(0.1), v1(1.1), 1.05));
    double want = std::pow(0.3 + 0.2, 2) + std::pow(1.1 / 1.05 - 1.0, 2);
    EXPECT_NEAR(omega_gla(ref, q), want + 1e-4, 1e-12);
    EXPECT_THROW((void)ref.curve(1.5), Error);
}

TEST(Glancing, Omega0DualDerivativeMatchesFiniteDifferences)
{
    Chart c = disc_chart();
    GlancingReference ref(c, boundary_point(1.0), 1.0);
    PhaseLayout L = c.layout();
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 10; ++trial)
    {
        Vec z = L.pack(point(v1(0.02), v1(-0.3 + 0.05 * nd(rng)), 0.3 + 0.05 * nd(rng), v1(0.1), v1(1.0 + 0.05 * nd(rng)),
                             1.0));
        Vec v(L.size());
        for (int i = 0; i < v.size(); ++i)
            v[i] = nd(rng);
        double d = directional_derivative(z, v, [&](std::span<Dual const> zd) { return ref.omega0<Dual>(zd); });
        double h = 1e-6;
        auto w0 = [&](Vec const& zz) {
            return ref.omega0<double>(std::span<double const>(zz.data(), static_cast<std::size_t>(zz.size())));
        };
        EXPECT_NEAR(d, (w0(z + h * v) - w0(z - h * v)) / (2 * h), 1e-6);
    }
}

TEST(Glancing, SymbolVanishesOnNegativeSheetAndSupportBounds)
{
    Chart c = flat_chart(1, 1, 2.0);
    GlancingReference ref(c, boundary_point(1.0), 1.0);
    CommutantParams p = params_at(1.0, 0.05, 0.5);
    PhaseLayout L = c.layout();
    EXPECT_EQ(a_gla(ref, L.pack(point(v1(0.0), v1(0.0), -0.06, v1(0.0), v1(-1.0), -1.0)), p), 0.0);
    GlancingSupportReport rep = glancing_support_report(ref, p, 4000, 1);
    EXPECT_TRUE(rep.pass());
    EXPECT_GT(rep.in_support, 0);
    EXPECT_GT(rep.in_dchi1_support, 0);
    EXPECT_LE(rep.max_abs_dt, 2 * p.delta);
    EXPECT_LE(rep.max_omega, 4 * p.delta * p.delta * p.eps * p.eps);
    EXPECT_EQ(code_of([&] { (void)glancing_support_report(ref, params_at(1.0, 0.05, 1.5)); }),
              ErrorCode::InvalidArgument);
}

TEST(Glancing, EstimateOnGridAndAblation)
{
    Chart c = flat_chart(1, 1, 2.0);
    GlancingReference ref(c, boundary_point(1.0), 1.0);
    GlancingEstimateReport rep = hp_omega_glancing_estimate(ref, GridSpec{});
    EXPECT_EQ(rep.points, 5 * 5 * 5 * 5 * 5);
    EXPECT_GT(rep.admissible_c, 0.0);
    EXPECT_TRUE(std::isfinite(rep.admissible_c));
    EXPECT_LT(rep.on_curve_max_lhs, 1e-12);
    // dropping the |p| term can only shrink the denominator
    EXPECT_GE(rep.c_without_p, rep.admissible_c);
    EXPECT_EQ(rep.ablation_violations > 0, rep.c_without_p > rep.admissible_c);
    EXPECT_EQ(code_of([&] { (void)hp_omega_glancing_estimate(ref, GridSpec{1, 0.05, 0.05}); }), ErrorCode::EmptyGrid);
}

TEST(Glancing, ReferenceErrors)
{
    Chart c = flat_chart(1, 1, 2.0);
    EXPECT_EQ(code_of([&] { GlancingReference r(c, boundary_point(0.5)); }), ErrorCode::NotGlancing);
    EXPECT_EQ(code_of([&] { GlancingReference r(c, boundary_point(-1.0, -1.0)); }), ErrorCode::InvalidArgument);
}

TEST(Brackets, ClosedForms)
{
    auto names = symbol_variable_names(1, 1);
    ASSERT_EQ(names, (std::vector<std::string>{"x1", "y1", "t", "sigma1", "zeta1", "tau"}));
    auto e = [&](char const* s) { return Expression::parse(s, names); };
    BCotangentPoint q = bpoint(0.4, 0.2, 0.1, 0.3, 0.5, 1.0);
    EXPECT_NEAR(b_poisson_bracket(e("x1"), e("sigma1"), q), -0.4, 1e-15);
    EXPECT_NEAR(b_poisson_bracket(e("t"), e("tau"), q), -1.0, 1e-15);
    EXPECT_NEAR(b_poisson_bracket(e("y1"), e("zeta1"), q), -1.0, 1e-15);
    // {σ, σ²} = 0, {σ, x} = x
    EXPECT_NEAR(b_poisson_bracket(e("sigma1"), e("sigma1^2"), q), 0.0, 1e-15);
    EXPECT_NEAR(b_poisson_bracket(e("sigma1"), e("x1"), q), 0.4, 1e-15);
}

TEST(Brackets, IdentitiesHoldOnRandomPointsProperty)
{
    for (auto [k, l] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}})
    {
        auto names = symbol_variable_names(k, l);
        auto grid = cli::detail::bracket_grid(k, l, 300, 9);
        for (auto const& s : cli::detail::bracket_basket(k, l))
        {
            BracketReport rep = bracket_identity_report(Expression::parse(s, names), k, l, grid);
            EXPECT_EQ(rep.points, 300);
            EXPECT_LT(rep.max_discrepancy(), 1e-10) << s;
        }
    }
}

TEST(Brackets, NonDifferentiablePointIsReported)
{
    auto names = symbol_variable_names(1, 1);
    BCotangentPoint q = bpoint(0.5, 0.0, 0.0, 0.2, 0.1, 1.0);
    EXPECT_EQ(code_of([&] {
                  (void)b_poisson_bracket(Expression::parse("sqrt(x1-0.5)", names), Expression::parse("sigma1", names), q);
              }),
              ErrorCode::NonDifferentiable);
    EXPECT_EQ(code_of([&] { (void)bracket_identity_report(Expression::parse("sqrt(x1-0.5)", names), 1, 1, {q}); }),
              ErrorCode::NonDifferentiable);
}
