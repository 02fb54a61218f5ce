// Property checks on traced rays.
#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace brokenray;
using namespace testing_support;

namespace {

TraceConfig config(double max_time)
{
    TraceConfig cfg;
    cfg.integrator.max_time = max_time;
    return cfg;
}

double detail_of(PropertyReport const& r, std::string const& key)
{
    for (auto const& [k, v] : r.details)
        if (k == key)
            return v;
    ADD_FAILURE() << "missing detail " << key;
    return 0.0;
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

TEST(Conservation, PassesOnTracedDiscRay)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.5), config(5.0));
    PropertyReport rep = check_conservation(c, r);
    EXPECT_TRUE(rep.pass);
    EXPECT_LT(rep.statistic, 1e-10);
}

TEST(Conservation, DetectsCorruptedKnot)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.5), config(2.0));
    PhaseLayout L = r.layout;
    // ξ, ζ scaled by 1.01 gives p = 1 − 1.0201
    Knot& kn = r.segments[1].knots[3];
    kn.z.segment(L.half(), L.k + L.l) *= 1.01;
    PropertyReport rep = check_conservation(c, r);
    EXPECT_FALSE(rep.pass);
    EXPECT_NEAR(rep.statistic, 0.0201, 1e-9);
    EXPECT_DOUBLE_EQ(rep.s, kn.s);
}

TEST(OneSided, SlopesMatchHamiltonFieldAtReflections)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.5), config(3.0));
    for (std::string name : {"t", "y1", "zeta1", "eta", "tau"})
    {
        PiFunction f = pi_function(r.layout, name);
        for (std::size_t i = 0; i + 1 < r.events.size(); ++i)
        {
            PropertyReport rep = check_one_sided(c, r, i, f);
            EXPECT_TRUE(rep.pass) << name << " at event " << i << ": " << rep.statistic;
        }
    }
    // closed forms at the rim: dt/ds = 2τ, dη/ds = 2ξ² = 2(1 − b²) on both sides
    PropertyReport t = check_one_sided(c, r, 0, pi_function(r.layout, "t"));
    EXPECT_DOUBLE_EQ(detail_of(t, "right_hp"), 2.0);
    PropertyReport e = check_one_sided(c, r, 0, pi_function(r.layout, "eta"));
    EXPECT_NEAR(detail_of(e, "left_hp"), 1.5, 1e-9);
    EXPECT_NEAR(detail_of(e, "right_hp"), 1.5, 1e-9);
}

TEST(OneSided, ErrorCases)
{
    Chart c = flat_chart(1, 0, 2.0);
    Ray r = trace_ray(c, point(v1(1.0), v0(), 0.0, v1(1.0), v0()), config(10.0));
    PiFunction f = pi_function(r.layout, "t");
    EXPECT_EQ(code_of([&] { (void)check_one_sided(c, r, 1, f); }), ErrorCode::NotAnEvent);
    EXPECT_EQ(code_of([&] { (void)check_one_sided(c, r, 7, f); }), ErrorCode::NotAnEvent);
    EXPECT_EQ(code_of([&] { (void)pi_function(r.layout, "y1"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { (void)pi_function(r.layout, "x2"); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { (void)pi_function(r.layout, "speed"); }), ErrorCode::InvalidArgument);
}

TEST(LeavesFace, ReflectionsLeaveImmediately)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.3), config(4.0));
    PropertyReport rep = check_leaves_face(c, r);
    EXPECT_TRUE(rep.pass) << rep.statistic;
}

TEST(Lipschitz, FlatQuotientsAreTwiceTheFiber)
{
    // |dx/ds| = 2|ξ|, |dy/ds| = 2|ζ|, dt/ds = 2, unchanged by reflection
    Chart c = flat_chart(1, 1, 2.0);
    std::vector<Ray> rays;
    for (double a : {0.3, 0.6, 0.8})
        rays.push_back(trace_ray(c, point(v1(1.0), v1(0.0), 0.0, v1(a), v1(std::sqrt(1 - a * a))), config(1.5)));
    ParameterBox K;
    K.s_b = 1.5;
    PropertyReport rep = check_lipschitz(rays, {"x", "y", "t", "zeta", "tau"}, K, 10.0, 601);
    EXPECT_TRUE(rep.pass);
    EXPECT_NEAR(detail_of(rep, "quotient_x"), 1.6, 1e-9);
    EXPECT_NEAR(detail_of(rep, "quotient_y"), 2 * std::sqrt(1 - 0.09), 1e-9);
    EXPECT_NEAR(detail_of(rep, "quotient_t"), 2.0, 1e-9);
    EXPECT_NEAR(detail_of(rep, "quotient_zeta"), 0.0, 1e-12);
    EXPECT_EQ(detail_of(rep, "rays_used"), 3.0);
    PropertyReport tight = check_lipschitz(rays, {"t"}, K, 1.9, 601);
    EXPECT_FALSE(tight.pass);
}

TEST(Lipschitz, ErrorCases)
{
    Chart c = flat_chart(1, 1, 2.0);
    std::vector<Ray> rays{trace_ray(c, point(v1(1.0), v1(0.0), 0.0, v1(0.6), v1(0.8)), config(1.0))};
    ParameterBox K;
    EXPECT_EQ(code_of([&] { (void)check_lipschitz(rays, {"x"}, K, 10.0, 1); }), ErrorCode::EmptyGrid);
    K.t_hi = 0.5;
    EXPECT_EQ(code_of([&] { (void)check_lipschitz(rays, {"x"}, K, 10.0); }), ErrorCode::EmptyFamily);
    K = ParameterBox{};
    K.s_b = 2.0;
    EXPECT_EQ(code_of([&] { (void)check_lipschitz(rays, {"x"}, K, 10.0); }), ErrorCode::EmptyFamily);
}

TEST(Oracle, FlatTraceMatchesClosedFormBilliard)
{
    Chart c = flat_chart(2, 1, 1.0, true);
    PropertyReport rep =
        compare_to_oracle(c, point(v2(0.3, 0.6), v1(0.0), 0.0, v2(0.48, -0.64), v1(0.6)), config(6.0), 0);
    EXPECT_TRUE(rep.pass) << rep.statistic;
    EXPECT_GE(detail_of(rep, "reflections"), 10.0);
    EXPECT_LT(rep.statistic, 1e-10);
}

TEST(Oracle, OracleRejectsCurvedCharts)
{
    EXPECT_EQ(code_of([] { (void)billiard_oracle_flat(disc_chart(), disc_chord(0.5), 1.0); }), ErrorCode::NotFlat);
    EXPECT_TRUE(is_flat(flat_chart(2, 2, 1.0)));
    EXPECT_FALSE(is_flat(disc_chart()));
}

TEST(Oracle, ReflectionTimesAreExact)
{
    Chart c = flat_chart(1, 0, 1.0, true);
    Ray r = billiard_oracle_flat(c, point(v1(0.5), v0(), 0.0, v1(1.0), v0()), 2.0);
    ASSERT_EQ(r.events.size(), 5u);
    for (int i = 0; i < 4; ++i)
        EXPECT_DOUBLE_EQ(r.events[static_cast<std::size_t>(i)].s, 0.25 + 0.5 * i);
}

TEST(UniformLimit, DiscChordsConvergeToTheGlidingRay)
{
    Chart c = disc_chart();
    std::vector<Ray> family;
    for (double b : {0.99, 0.999, 0.9999})
        family.push_back(trace_ray(c, disc_chord(b), config(1.0)));
    Ray glide = trace_ray(c, point(v1(0.0), v1(0.0), 0.0, v1(0.0), v1(1.0)), config(1.0));
    UniformLimitReport rep = check_uniform_limit(c, family, glide, 0.0, 1.0, 1e-3, 1001);
    ASSERT_EQ(rep.distances.size(), 3u);
    EXPECT_GT(rep.distances[0], rep.distances[1]);
    EXPECT_GT(rep.distances[1], rep.distances[2]);
    // sup distance is governed by the chord depth 1 − b
    for (std::size_t n = 0; n < 3; ++n)
        EXPECT_LT(rep.distances[n], 3.0 * std::sqrt(2.0 * (1.0 - (n == 0 ? 0.99 : n == 1 ? 0.999 : 0.9999))));
    EXPECT_TRUE(rep.summary.pass);
    EXPECT_TRUE(rep.conservation.pass);
}

TEST(UniformLimit, ErrorCases)
{
    Chart c = disc_chart();
    Ray a = trace_ray(c, disc_chord(0.9), config(1.0));
    Ray shorter = trace_ray(c, disc_chord(0.9), config(0.5));
    EXPECT_EQ(code_of([&] { (void)check_uniform_limit(c, {}, a, 0.0, 1.0); }), ErrorCode::EmptyFamily);
    EXPECT_EQ(code_of([&] { (void)check_uniform_limit(c, {a}, shorter, 0.0, 1.0); }),
              ErrorCode::MismatchedIntervals);
    EXPECT_EQ(code_of([&] { (void)check_uniform_limit(c, {shorter}, a, 0.0, 1.0); }),
              ErrorCode::MismatchedIntervals);
    EXPECT_EQ(code_of([&] { (void)check_uniform_limit(c, {a}, a, 0.5, 0.5); }), ErrorCode::MismatchedIntervals);
    Ray flat = trace_ray(flat_chart(2, 0, 2.0), point(v2(1.0, 1.0), v0(), 0.0, v2(0.6, 0.8), v0()), config(1.0));
    EXPECT_EQ(code_of([&] { (void)check_uniform_limit(c, {flat}, a, 0.0, 1.0); }), ErrorCode::ChartMismatch);
}

TEST(Reversal, RetraceFollowsReversedRay)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.5), config(4.0));
    PropertyReport rep = check_reversal(c, r, config(4.0));
    EXPECT_TRUE(rep.pass) << rep.statistic;
    EXPECT_EQ(detail_of(rep, "involution_max"), 0.0);
    EXPECT_GE(detail_of(rep, "coverage"), 0.99);

    Chart q = flat_chart(2, 0, 2.0);
    double h = std::sqrt(0.5);
    Ray corner = trace_ray(q, point(v2(0.5, 0.5), v0(), 0.0, v2(h, h), v0()), config(2.0));
    EXPECT_TRUE(check_reversal(q, corner, config(2.0)).pass);
}
