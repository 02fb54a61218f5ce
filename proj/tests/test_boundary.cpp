// Boundary classification, reflection, glancing points and the tracer.
#include <gtest/gtest.h>

#include <numbers>

#include "helpers.hpp"

using namespace brokenray;
using namespace testing_support;

namespace {

//! k = 2, l = 0 with constant A = [[2, 0.5], [0.5, 1]].
Chart coupled_chart()
{
    Domain d;
    d.x_max = v2(2.0, 2.0);
    d.y_min = v0();
    d.y_max = v0();
    d.t_min = -100.0;
    d.t_max = 100.0;
    MetricCoeffs mc;
    mc.A = {Expression(2.0), Expression(0.5), Expression(0.5), Expression(1.0)};
    return Chart("coupled", 2, 0, d, mc);
}

Chart quarter_plane(double x_max = 2.0, bool upper = false) { return flat_chart(2, 0, x_max, upper); }

TraceConfig config(double max_time, BranchRule rule = BranchRule::specular())
{
    TraceConfig cfg;
    cfg.integrator.max_time = max_time;
    cfg.rule = rule;
    return cfg;
}

std::vector<EventKind> kinds(Ray const& r)
{
    std::vector<EventKind> out;
    for (auto const& e : r.events)
        out.push_back(e.kind);
    return out;
}

}  // namespace

TEST(Classify, MarginsOnFlatFace)
{
    Chart c = flat_chart(1, 1, 2.0);
    auto h = classify(c, boundary_point(0.5));
    EXPECT_EQ(h.kind, PointKind::Hyperbolic);
    EXPECT_DOUBLE_EQ(h.margin, 0.75);
    EXPECT_EQ(classify(c, boundary_point(1.0)).kind, PointKind::Glancing);
    auto e = classify(c, boundary_point(1.2));
    EXPECT_EQ(e.kind, PointKind::Elliptic);
    EXPECT_NEAR(e.margin, 1 - 1.44, 1e-15);
    // margin scales with τ²
    EXPECT_NEAR(classify(c, boundary_point(1.0, 2.0)).margin, 3.0, 1e-15);
}

TEST(Classify, QuadricWithCoupledFreeComponent)
{
    // g(u) = 2u² + u·w + w² at fixed ξ2 = w: center −w/4, margin 1 − w² + w²/8
    Chart c = coupled_chart();
    for (double w : {-0.7, 0.0, 0.4, 0.9})
    {
        CompressedPoint q;
        q.face.add_lower(0);
        q.x_free = v1(0.3);
        q.xi_free = v1(w);
        q.y = v0();
        q.zeta = v0();
        FaceQuadric fq = face_quadric(c, q);
        EXPECT_NEAR(fq.center[0], -w / 4, 1e-15);
        EXPECT_NEAR(fq.radius2, 1 - w * w + w * w / 8, 1e-14);
        EXPECT_NEAR(fq.A_SS(0, 0), 2.0, 0);
    }
}

TEST(Reflect, SpecularThroughQuadricCenterPreservesSymbol)
{
    Chart c = coupled_chart();
    PhaseLayout L = c.layout();
    double w = 0.4, u0 = -w / 4, r = std::sqrt((1 - w * w + w * w / 8) / 2);
    // arriving lift has dx1 = −2(2u + 0.5w) < 0
    CotangentPoint q = point(v2(0.0, 0.3), v0(), 0.0, v2(u0 + r, w), v0());
    ASSERT_NEAR(principal_symbol(c, L.pack(q)), 0.0, 1e-14);
    auto out = reflect(c, q, BranchRule::specular());
    ASSERT_EQ(out.size(), 1u);
    EXPECT_NEAR(out[0].xi[0], u0 - r, 1e-15);
    EXPECT_DOUBLE_EQ(out[0].xi[1], w);
    EXPECT_NEAR(principal_symbol(c, L.pack(out[0])), 0.0, 1e-14);
    EXPECT_TRUE(leaves_face(c, face_of(c, out[0].x), L.pack(out[0])));
}

TEST(Reflect, ErrorsOffTheHyperbolicSet)
{
    Chart c = flat_chart(1, 1, 2.0);
    EXPECT_THROW(reflect(c, point(v1(0.0), v1(0.0), 0.0, v1(0.0), v1(1.0)), BranchRule::specular()), Error);
    EXPECT_THROW(reflect(c, point(v1(0.5), v1(0.0), 0.0, v1(0.6), v1(0.8)), BranchRule::specular()), Error);
    EXPECT_THROW(classify(c, compress(c, point(v1(0.5), v1(0.0), 0.0, v1(0.6), v1(0.8)))), Error);
    try
    {
        (void)lift_set(c, boundary_point(1.5), 8);
        FAIL();
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::EllipticFace);
    }
}

TEST(BranchRule, Parse)
{
    EXPECT_EQ(BranchRule::parse("specular").kind, BranchRule::Kind::Specular);
    EXPECT_EQ(BranchRule::parse("all:12").n, 12);
    for (auto bad : {"all:", "all:0", "all:3x", "mirror", ""})
        EXPECT_THROW(BranchRule::parse(bad), Error) << bad;
}

TEST(Glancing, TypeMatchesFiniteDifferenceOfVelocity)
{
    // side·d/ds dx1 along H_p at the glancing lift: −2ζ²B'(0)
    struct Case
    {
        char const* b;
        double x_max;
        GlideKind kind;
        double want;
    };
    for (Case cs : {Case{"1/(1-x1)^2", 0.95, GlideKind::Gliding, -4.0},
                    Case{"(1-x1)^2", 0.5, GlideKind::Diffractive, 4.0}})
    {
        Chart c = curved_chart(cs.b, cs.x_max);
        GlancingKind g = glancing_type(c, boundary_point(1.0));
        EXPECT_EQ(g.kind, cs.kind) << cs.b;
        EXPECT_NEAR(g.second_derivative, cs.want, 1e-12);
        Vec z = c.layout().pack(point(v1(0.0), v1(0.0), 0.0, v1(0.0), v1(1.0)));
        Vec v = hamilton_field(c, z);
        double h = 1e-6;
        double fd = (hamilton_field(c, z + h * v)[0] - hamilton_field(c, z - h * v)[0]) / (2 * h);
        EXPECT_NEAR(g.second_derivative, fd, 1e-7) << cs.b;
    }
}

TEST(Glancing, ErrorCases)
{
    Chart c = flat_chart(1, 1, 2.0);
    EXPECT_THROW(glancing_type(c, boundary_point(0.5)), Error);
    Chart q = flat_chart(2, 1, 2.0);
    CompressedPoint corner;
    corner.face.add_lower(0);
    corner.face.add_lower(1);
    corner.x_free = v0();
    corner.xi_free = v0();
    corner.y = v1(0.0);
    corner.zeta = v1(1.0);
    try
    {
        (void)glancing_type(q, corner);
        FAIL();
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::CornerGlancing);
    }
}

TEST(Glide, DiscRimMovesAtUnitAngularRate)
{
    // on the rim B = 1, ζ = 1: dy/ds = −2, everything else frozen
    Chart c = disc_chart();
    Segment sg = glide(c, boundary_point(1.0), IntegratorConfig{});
    EXPECT_EQ(sg.kind, SegmentKind::Gliding);
    IntegratorConfig cfg;
    cfg.max_time = 1.5;
    sg = glide(c, boundary_point(1.0), cfg);
    EXPECT_EQ(sg.terminal, Terminal::TimeHorizon);
    for (Knot const& kn : sg.knots)
    {
        EXPECT_NEAR(kn.z[1], -2 * kn.s, 1e-12);
        EXPECT_NEAR(kn.z[2], 2 * kn.s, 1e-12);
        EXPECT_DOUBLE_EQ(kn.z[0], 0.0);
    }
    EXPECT_THROW(glide(c, boundary_point(0.5), cfg), Error);
}

TEST(Tracer, StripReflectsOnceThenExits)
{
    Chart c = flat_chart(1, 0, 2.0);
    Ray r = trace_ray(c, point(v1(1.0), v0(), 0.0, v1(1.0), v0()), config(10.0));
    ASSERT_EQ(kinds(r), (std::vector{EventKind::Reflection, EventKind::DomainExit}));
    EXPECT_NEAR(r.events[0].s, 0.5, 1e-12);
    EXPECT_NEAR(r.events[1].s, 1.5, 1e-12);
    EXPECT_DOUBLE_EQ(r.events[0].lift_in[0], 1.0);
    EXPECT_DOUBLE_EQ(r.events[0].lift_out[0], -1.0);
    EXPECT_NEAR(r.events[0].z_left[0], 0.0, 1e-12);
}

TEST(Tracer, StripWithUpperWallBounces)
{
    Chart c = flat_chart(1, 0, 1.0, true);
    Ray r = trace_ray(c, point(v1(0.5), v0(), 0.0, v1(1.0), v0()), config(2.0));
    // period 1 in s between the walls
    ASSERT_EQ(r.events.size(), 5u);
    for (int i = 0; i < 4; ++i)
    {
        EXPECT_EQ(r.events[i].kind, EventKind::Reflection);
        EXPECT_NEAR(r.events[i].s, 0.25 + 0.5 * i, 1e-12);
        EXPECT_EQ(r.events[i].face.to_string(), i % 2 == 0 ? "1" : "1u");
    }
    EXPECT_EQ(r.events[4].kind, EventKind::TimeHorizon);
}

TEST(Tracer, QuarterPlaneTwoSeparateReflections)
{
    Chart c = quarter_plane();
    Ray r = trace_ray(c, point(v2(0.5, 0.7), v0(), 0.0, v2(0.6, 0.8), v0()), config(5.0));
    ASSERT_EQ(kinds(r), (std::vector{EventKind::Reflection, EventKind::Reflection, EventKind::DomainExit}));
    EXPECT_NEAR(r.events[0].s, 0.5 / 1.2, 1e-12);
    EXPECT_EQ(r.events[0].face.to_string(), "1");
    EXPECT_NEAR(r.events[1].s, 0.7 / 1.6, 1e-12);
    EXPECT_EQ(r.events[1].face.to_string(), "2");
    EXPECT_NEAR(r.events[2].s, 0.4375 + 1.25, 1e-12);
}

TEST(Tracer, CornerSpecularFlipsBothComponents)
{
    Chart c = quarter_plane();
    double a = std::sqrt(0.5);
    Ray r = trace_ray(c, point(v2(0.5, 0.5), v0(), 0.0, v2(a, a), v0()), config(5.0));
    ASSERT_EQ(r.events.front().kind, EventKind::Reflection);
    EXPECT_EQ(r.events.front().face.to_string(), "1,2");
    EXPECT_NEAR(r.events.front().s, 0.5 / (2 * a), 1e-12);
    EXPECT_NEAR(r.events.front().lift_out[0], -a, 1e-15);
    EXPECT_NEAR(r.events.front().lift_out[1], -a, 1e-15);
}

TEST(Tracer, CornerBranchAllKeepsLeavingLiftsProperty)
{
    Chart c = quarter_plane();
    double a = std::sqrt(0.5);
    for (int n : {4, 9, 16, 32})
    {
        BranchTree t = trace(c, point(v2(0.5, 0.5), v0(), 0.0, v2(a, a), v0()), config(1.0, BranchRule::all(n)));
        int third_quadrant = 0;
        for (Vec const& w : detail::sphere_points(2, n, 0))
            third_quadrant += (w[0] < 0 && w[1] < 0);
        Event const& e = t.nodes[0].ray.events.front();
        if (third_quadrant == 1)
        {
            // a single leaving lift is an ordinary reflection
            EXPECT_EQ(e.kind, EventKind::Reflection) << n;
            EXPECT_EQ(t.nodes.size(), 1u);
            continue;
        }
        ASSERT_EQ(e.kind, EventKind::CornerBranch) << n;
        ASSERT_EQ(static_cast<int>(t.nodes[0].children.size()), e.n_branches);
        EXPECT_EQ(e.n_branches, third_quadrant) << n;
        for (int id : t.nodes[0].children)
        {
            Vec z = t.nodes[static_cast<std::size_t>(id)].ray.segments.front().knots.front().z;
            double x1 = z[c.layout().xi(0)], x2 = z[c.layout().xi(1)];
            EXPECT_NEAR(x1 * x1 + x2 * x2, 1.0, 1e-14);
            EXPECT_LT(x1, 0.0);
            EXPECT_LT(x2, 0.0);
        }
        EXPECT_EQ(t.leaves().size(), t.nodes[0].children.size());
    }
}

TEST(Tracer, BranchLeafCapFlags)
{
    Chart c = quarter_plane();
    double a = std::sqrt(0.5);
    TraceConfig cfg = config(1.0, BranchRule::all(16));
    cfg.max_leaves = 2;
    BranchTree t = trace(c, point(v2(0.5, 0.5), v0(), 0.0, v2(a, a), v0()), cfg);
    ASSERT_EQ(t.nodes.size(), 1u);
    Event const& e = t.nodes[0].ray.events.back();
    EXPECT_EQ(e.kind, EventKind::Flagged);
    EXPECT_NE(e.reason.find("leaf limit"), std::string::npos);
}

TEST(Tracer, DiscTenBouncesClosedForm)
{
    // chord length per bounce sqrt(1 − b²) in s, angular step 2 arccos b
    Chart c = disc_chart();
    double b = 0.5, ds = std::sqrt(1 - b * b);
    Ray r = trace_ray(c, disc_chord(b), config(8.67));
    ASSERT_EQ(r.events.size(), 11u);
    for (int n = 1; n <= 10; ++n)
    {
        Event const& e = r.events[static_cast<std::size_t>(n - 1)];
        ASSERT_EQ(e.kind, EventKind::Reflection);
        EXPECT_NEAR(e.s, n * ds, 1e-9);
        EXPECT_NEAR(e.z_left[1], -2.0 * n * std::acos(b), 1e-8);
    }
    EXPECT_EQ(r.events.back().kind, EventKind::TimeHorizon);
}

TEST(Tracer, GlancingDiscPointGlides)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, point(v1(0.0), v1(0.0), 0.0, v1(0.0), v1(1.0)), config(1.0));
    ASSERT_EQ(kinds(r), (std::vector{EventKind::GlancingEnter, EventKind::TimeHorizon}));
    EXPECT_EQ(r.events[0].glancing.kind, GlideKind::Gliding);
    ASSERT_EQ(r.segments.size(), 1u);
    EXPECT_EQ(r.segments[0].kind, SegmentKind::Gliding);
    EXPECT_NEAR(r.segments[0].knots.back().z[1], -2.0, 1e-12);
}

TEST(Tracer, DiffractivePointLeavesTangentially)
{
    Chart c = curved_chart("(1-x1)^2", 0.5);
    Ray r = trace_ray(c, point(v1(0.0), v1(0.0), 0.0, v1(0.0), v1(1.0)), config(4.0));
    ASSERT_GE(r.events.size(), 2u);
    EXPECT_EQ(r.events[0].kind, EventKind::GlancingEnter);
    EXPECT_EQ(r.events[0].glancing.kind, GlideKind::Diffractive);
    Segment const& sg = r.segments.front();
    EXPECT_EQ(sg.kind, SegmentKind::Interior);
    double prev = -1;
    for (Knot const& kn : sg.knots)
    {
        EXPECT_GE(kn.z[0], prev);
        prev = kn.z[0];
    }
    EXPECT_GT(prev, 0.0);
}

TEST(Tracer, RejectsNonCharacteristicStart)
{
    Chart c = flat_chart(1, 0, 2.0);
    EXPECT_THROW(trace(c, point(v1(1.0), v0(), 0.0, v1(0.5), v0()), config(1.0)), Error);
    TraceConfig cfg = config(1.0);
    cfg.integrator.rescale_fiber = true;
    Ray r = trace_ray(c, point(v1(1.0), v0(), 0.0, v1(0.5), v0()), cfg);
    EXPECT_NEAR(r.segments.front().knots.front().z[c.layout().xi(0)], 1.0, 1e-15);
}

TEST(Reverse, IsABitwiseInvolutionProperty)
{
    Chart c = disc_chart();
    for (double b : {0.1, 0.5, 0.9})
    {
        Ray r = trace_ray(c, disc_chord(b), config(3.0));
        Ray rr = reverse(reverse(r));
        ASSERT_EQ(rr.segments.size(), r.segments.size());
        for (std::size_t i = 0; i < r.segments.size(); ++i)
        {
            ASSERT_EQ(rr.segments[i].knots.size(), r.segments[i].knots.size());
            EXPECT_EQ(rr.segments[i].mirrored, r.segments[i].mirrored);
            for (std::size_t j = 0; j < r.segments[i].knots.size(); ++j)
            {
                EXPECT_EQ(rr.segments[i].knots[j].s, r.segments[i].knots[j].s);
                EXPECT_EQ(rr.segments[i].knots[j].z, r.segments[i].knots[j].z);
                EXPECT_EQ(rr.segments[i].knots[j].dz, r.segments[i].knots[j].dz);
            }
        }
        ASSERT_EQ(rr.events.size(), r.events.size());
        for (std::size_t i = 0; i < r.events.size(); ++i)
        {
            EXPECT_EQ(rr.events[i].s, r.events[i].s);
            EXPECT_EQ(rr.events[i].z_left, r.events[i].z_left);
            EXPECT_EQ(rr.events[i].z_right, r.events[i].z_right);
        }
    }
}

TEST(Reverse, StatesAreNegatedFiberAtNegatedParameter)
{
    Chart c = disc_chart();
    Ray r = trace_ray(c, disc_chord(0.3), config(2.0));
    Ray rev = reverse(r);
    PhaseLayout L = r.layout;
    for (double s : {0.1, 0.77, 1.3, 1.9})
    {
        Vec a = sample_states(r, {s})[0];
        Vec b = sample_states(rev, {-s}, true)[0];
        EXPECT_LT((a.head(L.half()) - b.head(L.half())).norm(), 1e-12) << s;
        EXPECT_LT((a.tail(L.half()) + b.tail(L.half())).norm(), 1e-12) << s;
    }
}
