// Dual numbers, expressions, charts, the integrator and the Hamilton field.
#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "helpers.hpp"

using namespace brokenray;
using namespace testing_support;

TEST(Dual, ProductRuleMatchesClosedForm)
{
    Dual x(0.7, 1.0);
    Dual f = sin(x) * exp(x);
    EXPECT_NEAR(f.v, std::sin(0.7) * std::exp(0.7), 1e-15);
    EXPECT_NEAR(f.d, (std::cos(0.7) + std::sin(0.7)) * std::exp(0.7), 1e-15);
}

TEST(Dual, QuotientAndSqrt)
{
    Dual x(2.0, 1.0);
    Dual f = sqrt(x) / (Dual(1.0) + x);
    // d/dx sqrt(x)/(1+x) = (1 - x)/(2 sqrt(x) (1+x)^2)
    EXPECT_NEAR(f.d, (1 - 2.0) / (2 * std::sqrt(2.0) * 9.0), 1e-15);
}

TEST(Expression, EvaluatesAndDifferentiates)
{
    auto vars = Chart::variable_names(1, 1);
    Expression e = Expression::parse("1/(1-x1)^2", vars);
    std::vector<double> v = {0.5, 0.0};
    EXPECT_DOUBLE_EQ(e.eval<double>(std::span<double const>(v)), 4.0);
    std::vector<Dual> d = {Dual(0.5, 1.0), Dual(0.0)};
    EXPECT_NEAR(e.eval<Dual>(std::span<Dual const>(d)).d, 16.0, 1e-12);  // 2/(1-x)^3
}

TEST(Expression, FunctionsAndPrecedence)
{
    auto vars = Chart::variable_names(1, 1);
    Expression e = Expression::parse("-x1^2 + 2*sin(pi*y1) - exp(0)", vars);
    std::vector<double> v = {3.0, 0.5};
    EXPECT_NEAR(e.eval<double>(std::span<double const>(v)), -9.0 + 2.0 - 1.0, 1e-14);
}

TEST(Expression, ParseErrorsCarryColumn)
{
    auto vars = Chart::variable_names(1, 1);
    try
    {
        (void)Expression::parse("1/(1-x1", vars);
        FAIL() << "expected a parse error";
    }
    catch (ExpressionError const& e)
    {
        EXPECT_EQ(e.column(), 8u);
    }
    EXPECT_THROW((void)Expression::parse("x3 + 1", vars), ExpressionError);
    EXPECT_THROW((void)Expression::parse("", vars), ExpressionError);
}

TEST(FaceId, StringRoundTripProperty)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial)
    {
        FaceId f;
        for (int j = 0; j < 6; ++j)
        {
            int r = static_cast<int>(rng() % 3);
            if (r == 1)
                f.add_lower(j);
            else if (r == 2)
                f.add_upper(j);
        }
        EXPECT_EQ(FaceId::from_string(f.to_string()), f);
    }
    EXPECT_EQ(FaceId{}.to_string(), "-");
}

TEST(Chart, RejectsIndefiniteMetric)
{
    Domain d;
    d.x_max = v1(1.0);
    d.y_min = v1(-1.0);
    d.y_max = v1(1.0);
    MetricCoeffs mc;
    mc.A = {Expression(-1.0)};
    mc.B = {Expression(1.0)};
    mc.C = {Expression(0.0)};
    EXPECT_THROW(Chart("bad", 1, 1, d, mc), Error);
}

TEST(Chart, FaceOfAndCompressionRoundTrip)
{
    Chart c = flat_chart(2, 1, 2.0);
    CotangentPoint q = point(v2(0.0, 0.5), v1(0.3), 0.1, v2(-0.6, 0.2), v1(0.4));
    FaceId f = face_of(c, q.x);
    EXPECT_TRUE(f.contains(0));
    EXPECT_FALSE(f.contains(1));
    CompressedPoint cp = compress(c, q);
    ASSERT_EQ(cp.xi_free.size(), 1);
    EXPECT_DOUBLE_EQ(cp.xi_free[0], 0.2);
    CotangentPoint back = lift(c, cp, v1(-0.6));
    EXPECT_EQ(c.layout().pack(back), c.layout().pack(q));
}

TEST(Chart, BTransformUsesProducts)
{
    CotangentPoint q = point(v2(0.5, 2.0), v1(0.0), 0.0, v2(3.0, -1.0), v1(0.0));
    BCotangentPoint b = to_b_coords(q);
    EXPECT_DOUBLE_EQ(b.sigma[0], 1.5);
    EXPECT_DOUBLE_EQ(b.sigma[1], -2.0);
}

TEST(Integrator, HarmonicOscillatorAgainstClosedForm)
{
    IntegratorConfig cfg;
    cfg.max_step = 0.05;
    DormandPrince dp([](Vec const& z) { return Vec{{z[1], -z[0]}}; }, cfg);
    double const two_pi = 2 * std::numbers::pi;
    auto res = dp.run(Vec{{0.0, 1.0}}, 0.0, 1, two_pi, {});
    EXPECT_EQ(res.stop, IntegrationResult::Stop::Horizon);
    EXPECT_NEAR(res.s_end, two_pi, 1e-14);
    EXPECT_NEAR(res.z_end[0], 0.0, 1e-9);
    EXPECT_NEAR(res.z_end[1], 1.0, 1e-9);
    // dense output between knots
    for (auto const& st : res.steps)
    {
        double sm = st.s0 + 0.5 * st.h;
        EXPECT_NEAR(st.eval(sm)[0], std::sin(sm), 1e-9);
    }
}

TEST(Integrator, EventLocatesZeroCrossing)
{
    IntegratorConfig cfg;
    DormandPrince dp([](Vec const& z) { return Vec{{z[1], -z[0]}}; }, cfg);
    // y = sin(s) crosses zero at π; the event starts armed since g(0.1) > tol
    auto res = dp.run(Vec{{std::sin(0.1), std::cos(0.1)}}, 0.1, 1, 10.0, {{[](Vec const& z) { return z[0]; }, 7}});
    ASSERT_EQ(res.stop, IntegrationResult::Stop::Event);
    ASSERT_EQ(res.fired, std::vector<int>{7});
    EXPECT_NEAR(res.s_end, std::numbers::pi, 1e-9);
}

TEST(Integrator, BackwardDirection)
{
    IntegratorConfig cfg;
    DormandPrince dp([](Vec const& z) { return Vec{{z[0]}}; }, cfg);
    auto res = dp.run(Vec{{1.0}}, 0.0, -1, 1.0, {});
    EXPECT_NEAR(res.s_end, -1.0, 1e-14);
    EXPECT_NEAR(res.z_end[0], std::exp(-1.0), 1e-11);
}

TEST(Hamiltonian, FlatFieldIsStraightLine)
{
    Chart c = flat_chart(1, 1, 2.0);
    PhaseLayout L = c.layout();
    Vec z = L.pack(point(v1(0.5), v1(0.0), 0.0, v1(0.8), v1(0.6)));
    Vec v = hamilton_field(c, z);
    Vec want(L.size());
    want << -1.6, -1.2, 2.0, 0.0, 0.0, 0.0;
    EXPECT_LT((v - want).norm(), 1e-15);
    EXPECT_NEAR(principal_symbol(c, z), 0.0, 1e-15);
}

TEST(Hamiltonian, CurvedFieldMatchesFiniteDifferences)
{
    // H_p = (∂_fiber p, −∂_base p), checked against central differences of p
    Chart c = curved_chart("1/(1-x1)^2 + 0.3*sin(y1)", 0.9);
    PhaseLayout L = c.layout();
    Vec z = L.pack(point(v1(0.3), v1(0.7), 0.2, v1(-0.4), v1(0.5), 1.1));
    Vec v = hamilton_field(c, z);
    double h = 1e-6;
    for (int i = 0; i < L.half(); ++i)
    {
        Vec e = Vec::Zero(L.size());
        e[L.half() + i] = h;
        double dfib = (principal_symbol(c, z + e) - principal_symbol(c, z - e)) / (2 * h);
        Vec eb = Vec::Zero(L.size());
        eb[i] = h;
        double dbase = (principal_symbol(c, z + eb) - principal_symbol(c, z - eb)) / (2 * h);
        EXPECT_NEAR(v[i], dfib, 1e-8) << "base rate " << i;
        EXPECT_NEAR(v[L.half() + i], -dbase, 1e-8) << "fiber rate " << i;
    }
}

TEST(Hamiltonian, HpEtaAtBoundary)
{
    Chart c = flat_chart(1, 1, 2.0);
    EXPECT_DOUBLE_EQ(eval_Hp_eta_boundary(c, boundary_point(0.5)), 2.0 * (1.0 - 0.25));
    // matches the directional derivative of η at any lift over x = 0
    PhaseLayout L = c.layout();
    Vec z = L.pack(point(v1(0.0), v1(0.0), 0.0, v1(-std::sqrt(0.75)), v1(0.5)));
    double d = hp_derivative(c, z, [&](std::span<Dual const> zd) { return eta<Dual>(L, zd); });
    EXPECT_NEAR(d, 1.5, 1e-14);
}

TEST(Hamiltonian, DiscChordClosedForm)
{
    // one chord from the rim: Δs = sqrt(1 − b²), Δy = −2 arccos(b)
    Chart c = disc_chart();
    IntegratorConfig cfg;
    for (double b : {0.2, 0.5, 0.8})
    {
        Segment sg = flow_interior(c, disc_chord(b), cfg);
        ASSERT_EQ(sg.terminal, Terminal::BoundaryHit);
        EXPECT_NEAR(sg.s_end, std::sqrt(1 - b * b), 1e-10);
        Vec z = sg.knots.back().z;
        EXPECT_NEAR(z[1], -2 * std::acos(b), 1e-9);
        EXPECT_NEAR(z[3], std::sqrt(1 - b * b), 1e-9);  // ξ flipped by the flow
        EXPECT_LT(sg.max_drift, 1e-10);
    }
}

TEST(Hamiltonian, SymbolConservedAlongFlowProperty)
{
    Chart c = curved_chart("1/(1-x1)^2", 0.95);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.05, 0.6), ang(0.0, 2 * std::numbers::pi);
    IntegratorConfig cfg;
    cfg.max_time = 2.0;
    for (int trial = 0; trial < 20; ++trial)
    {
        double x = u(rng), th = ang(rng);
        // solve ξ² + ζ²/(1−x)² = 1 along the direction θ
        double a = std::cos(th), b = std::sin(th) * (1 - x);
        CotangentPoint q = point(v1(x), v1(0.0), 0.0, v1(a), v1(b));
        Segment sg = flow_interior(c, q, cfg);
        for (Knot const& kn : sg.knots)
            EXPECT_LT(std::abs(principal_symbol(c, kn.z)), 1e-10);
    }
}

TEST(Hamiltonian, DegenerateAndOutwardStartsRejected)
{
    Chart c = flat_chart(1, 1, 2.0);
    IntegratorConfig cfg;
    EXPECT_THROW(flow_interior(c, point(v1(0.0), v1(0.0), 0.0, v1(0.5), v1(0.0)), cfg), Error);
    EXPECT_THROW(flow_interior(c, point(v1(3.0), v1(0.0), 0.0, v1(0.5), v1(0.0)), cfg), Error);
}
