#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "boundary.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "hamiltonian.hpp"
#include "ray.hpp"

namespace brokenray {

struct TraceConfig
{
    IntegratorConfig integrator;
    BoundaryConfig boundary;
    BranchRule rule = BranchRule::specular();
    int max_depth = 32;
    int max_leaves = 4096;
    std::uint64_t seed = 0;
    Direction direction = Direction::Forward;
    //! parameter assigned to the initial point
    double s0 = 0.0;
    //! |p| ≤ char_tol·τ² is required of the initial point
    double char_tol = 1e-8;

    void validate() const
    {
        integrator.validate();
        if (max_depth < 1 || max_leaves < 1)
            throw Error(ErrorCode::InvalidArgument, "branch limits must be positive");
        if (!(boundary.theta > 0 && boundary.theta_g > 0 && char_tol > 0))
            throw Error(ErrorCode::InvalidArgument, "tolerances must be positive");
    }
};

namespace detail {

class PieceTracer
{
  public:
    enum class Mode { Flow, Tangent, Boundary };

    struct Outcome
    {
        std::vector<Vec> branches;
    };

    PieceTracer(Chart const& chart, TraceConfig const& cfg) : chart_(chart), cfg_(cfg), L_(chart.layout()) {}

    /*!
     * Trace one piece from state z at parameter s until a terminal event or a
     * corner with several outgoing lifts, whose states are returned.
     */
    Outcome run(Ray& ray, Vec z, double s, Mode mode, FaceId bface = {}) const
    {
        Outcome out;
        int dir = static_cast<int>(cfg_.direction);
        double s_end = cfg_.s0 + dir * cfg_.integrator.max_time;
        for (;;)
        {
            if (mode != Mode::Boundary)
            {
                double remaining = dir * (s_end - s);
                if (remaining <= 1e-12)
                {
                    stub_segment(ray, z, s, SegmentKind::Interior, {});
                    push_event(ray, EventKind::TimeHorizon, s, z, z);
                    return out;
                }
                Segment seg;
                try
                {
                    seg = flow_interior(chart_, L_.unpack(z), cfg_.integrator, cfg_.direction, s, remaining,
                                        mode == Mode::Flow);
                }
                catch (Error const& e)
                {
                    stub_segment(ray, z, s, SegmentKind::Interior, {});
                    flag(ray, s, z, e.what());
                    return out;
                }
                if (seg.drift_warning)
                    ray.warnings.push_back({seg.s_end, "p drift " + fmt(seg.max_drift)});
                z = seg.knots.back().z;
                s = seg.s_end;
                Terminal term = seg.terminal;
                FaceId hit = seg.hit_face;
                ray.segments.push_back(std::move(seg));
                if (term == Terminal::TimeHorizon)
                {
                    push_event(ray, EventKind::TimeHorizon, s, z, z);
                    return out;
                }
                if (term == Terminal::DomainExit)
                {
                    push_event(ray, EventKind::DomainExit, s, z, z);
                    return out;
                }
                mode = Mode::Boundary;
                bface = hit;
                continue;
            }

            // boundary handling at (z, s) on bface
            try
            {
                CotangentPoint q = L_.unpack(z);
                CompressedPoint c = compress_onto(chart_, q, bface);
                Classification cls = classify(chart_, c, cfg_.boundary);
                if (cls.kind == PointKind::Elliptic)
                {
                    flag(ray, s, z, "elliptic boundary point, margin " + fmt(cls.margin));
                    return out;
                }
                if (cls.kind == PointKind::Hyperbolic)
                {
                    auto outs = reflect(chart_, q, bface, cfg_.rule, cfg_.seed, cfg_.boundary, dir);
                    if (outs.size() == 1)
                    {
                        Vec zo = L_.pack(outs.front());
                        Event& e = push_event(ray, EventKind::Reflection, s, z, zo);
                        e.face = bface;
                        e.lift_in = face_components(L_, bface, z);
                        e.lift_out = face_components(L_, bface, zo);
                        z = zo;
                        mode = Mode::Flow;
                        continue;
                    }
                    Event& e = push_event(ray, EventKind::CornerBranch, s, z, z);
                    e.face = bface;
                    e.lift_in = face_components(L_, bface, z);
                    e.n_branches = static_cast<int>(outs.size());
                    for (auto const& qo : outs)
                        out.branches.push_back(L_.pack(qo));
                    return out;
                }
                // glancing
                Vec zc = canonical_lift(chart_, bface, z);
                GlancingKind gk;
                if (bface.codim() >= 2)
                {
                    ray.warnings.push_back({s, "corner glancing on face " + bface.to_string()});
                    gk.second_derivative = inward_acceleration(chart_, bface, zc);
                    gk.kind = GlideKind::Gliding;
                }
                else
                    gk = glancing_type(chart_, c, cfg_.boundary);
                Event& e = push_event(ray, EventKind::GlancingEnter, s, z, zc);
                e.face = bface;
                e.glancing = gk;
                z = zc;
                if (gk.kind == GlideKind::Diffractive)
                {
                    mode = Mode::Tangent;
                    continue;
                }
                if (gk.kind == GlideKind::Undetermined)
                    ray.warnings.push_back({s, "undetermined tangency, continuing as gliding"});
                if (!glide_from(ray, z, s, bface, mode, s_end))
                    return out;
            }
            catch (Error const& e)
            {
                flag(ray, s, z, e.what());
                return out;
            }
        }
    }

  private:
    Chart const& chart_;
    TraceConfig const& cfg_;
    PhaseLayout L_;

    static std::string fmt(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", v);
        return buf;
    }

    //! Event with states given in flow order; stored as one-sided limits in s.
    Event& push_event(Ray& ray, EventKind kind, double s, Vec const& before, Vec const& after) const
    {
        Event e;
        e.kind = kind;
        e.s = s;
        bool fwd = cfg_.direction == Direction::Forward;
        e.z_left = fwd ? before : after;
        e.z_right = fwd ? after : before;
        ray.events.push_back(std::move(e));
        return ray.events.back();
    }

    void flag(Ray& ray, double s, Vec const& z, std::string const& reason) const
    {
        Event& e = push_event(ray, EventKind::Flagged, s, z, z);
        e.reason = reason;
    }

    void stub_segment(Ray& ray, Vec const& z, double s, SegmentKind kind, FaceId face) const
    {
        Segment sg;
        sg.kind = kind;
        sg.face = face;
        sg.s_start = sg.s_end = s;
        sg.terminal = Terminal::Handoff;
        Vec dz = Vec::Zero(z.size());
        try
        {
            dz = kind == SegmentKind::Interior ? hamilton_field(chart_, z) : glide_field(chart_, face, z);
        }
        catch (Error const&)
        {
        }
        sg.knots.push_back({s, z, dz});
        ray.segments.push_back(std::move(sg));
    }

    /*!
     * Glide from the canonical lift z on bface; updates z, s, mode and bface
     * for the continuation. Returns false when the piece has ended.
     */
    bool glide_from(Ray& ray, Vec& z, double& s, FaceId& bface, Mode& mode, double s_end) const
    {
        int dir = static_cast<int>(cfg_.direction);
        double remaining = dir * (s_end - s);
        if (remaining <= 1e-12)
        {
            stub_segment(ray, z, s, SegmentKind::Gliding, bface);
            push_event(ray, EventKind::TimeHorizon, s, z, z);
            return false;
        }
        CompressedPoint c = compress_onto(chart_, L_.unpack(z), bface);
        Segment seg = glide(chart_, c, cfg_.integrator, cfg_.boundary, cfg_.direction, s, remaining);
        if (seg.drift_warning)
            ray.warnings.push_back({seg.s_end, "glancing margin drift " + fmt(seg.max_drift)});
        z = canonical_lift(chart_, bface, seg.knots.back().z);
        s = seg.s_end;
        Terminal term = seg.terminal;
        FaceId hit = seg.hit_face;
        ray.segments.push_back(std::move(seg));
        switch (term)
        {
            case Terminal::TimeHorizon: push_event(ray, EventKind::TimeHorizon, s, z, z); return false;
            case Terminal::DomainExit: push_event(ray, EventKind::DomainExit, s, z, z); return false;
            case Terminal::Diffractive:
            {
                Event& e = push_event(ray, EventKind::GlancingExit, s, z, z);
                e.face = bface;
                mode = Mode::Tangent;
                return true;
            }
            case Terminal::BandExit:
            {
                CompressedPoint ce = compress_onto(chart_, L_.unpack(z), bface);
                Classification cls = classify(chart_, ce, cfg_.boundary);
                if (cls.kind != PointKind::Hyperbolic)
                {
                    flag(ray, s, z, "glide left the glancing band into the elliptic set");
                    return false;
                }
                LiftSet ls = lift_set(chart_, ce, std::max(cfg_.rule.n, 64), cfg_.seed, std::nullopt, cfg_.boundary);
                for (Vec const& u : ls.lifts)
                {
                    Vec zo = with_face_components(L_, bface, z, u);
                    if (leaves_face(chart_, bface, zo, dir))
                    {
                        Event& e = push_event(ray, EventKind::GlancingExit, s, z, zo);
                        e.face = bface;
                        e.lift_in = face_components(L_, bface, z);
                        e.lift_out = u;
                        z = zo;
                        mode = Mode::Flow;
                        return true;
                    }
                }
                flag(ray, s, z, "no leaving lift after the glancing band");
                return false;
            }
            case Terminal::BoundaryHit:
                bface.lower |= hit.lower;
                bface.upper |= hit.upper;
                mode = Mode::Boundary;
                return true;
            case Terminal::Handoff: flag(ray, s, z, "glide stopped without a cause"); return false;
        }
        return false;
    }
};

}  // namespace detail

/*!
 * Trace the generalized broken bicharacteristic from q0.
 *
 * q0 must lie in the chart with |p| ≤ char_tol·τ² (or is projected onto
 * Char(P) when fiber rescaling is enabled); the fiber is scaled so that
 * |τ| = 1. With the Specular rule the tree has a single node.
 */
inline BranchTree trace(Chart const& chart, CotangentPoint q0, TraceConfig const& cfg, std::string scenario = {})
{
    cfg.validate();
    require_in_domain(chart, q0);
    if (q0.tau == 0.0 || !std::isfinite(q0.tau))
        throw Error(ErrorCode::InvalidArgument, "tau must be finite and nonzero");
    PhaseLayout L = chart.layout();
    double scale = 1.0 / std::abs(q0.tau);
    q0.xi *= scale;
    q0.zeta *= scale;
    q0.tau *= scale;
    double p = principal_symbol(chart, L.pack(q0));
    if (std::abs(p) > cfg.char_tol)
    {
        if (!cfg.integrator.rescale_fiber)
            throw Error(ErrorCode::InvalidArgument, "initial point is not characteristic: p = " + std::to_string(p));
        double g = 1.0 - p;
        if (!(g > 0))
            throw Error(ErrorCode::InvalidArgument, "initial point cannot be projected onto Char(P)");
        double lam = 1.0 / std::sqrt(g);
        q0.xi *= lam;
        q0.zeta *= lam;
    }

    BranchTree tree;
    tree.scenario = std::move(scenario);
    detail::PieceTracer pt(chart, cfg);

    struct Pending
    {
        int node;
        Vec z;
        double s;
        detail::PieceTracer::Mode mode;
        FaceId face;
    };
    std::deque<Pending> queue;

    Vec z0 = L.pack(q0);
    FaceId f0 = face_of(chart, q0.x);
    auto mode0 = detail::PieceTracer::Mode::Flow;
    if (!f0.empty())
    {
        Vec v0 = hamilton_field(chart, z0);
        int dir = static_cast<int>(cfg.direction);
        for (int j : f0.indices())
            if (!(dir * f0.side(j) * v0[L.x(j)] > 0))
                mode0 = detail::PieceTracer::Mode::Boundary;
    }
    BranchTree::Node root;
    root.ray.layout = L;
    root.ray.direction = cfg.direction;
    tree.nodes.push_back(std::move(root));
    queue.push_back({0, z0, cfg.s0, mode0, f0});
    int leaves = 1;

    while (!queue.empty())
    {
        Pending job = std::move(queue.front());
        queue.pop_front();
        Ray ray;
        ray.layout = L;
        ray.direction = cfg.direction;
        auto outcome = pt.run(ray, job.z, job.s, job.mode, job.face);
        int depth = tree.nodes[static_cast<std::size_t>(job.node)].depth;
        if (!outcome.branches.empty())
        {
            Event& last = ray.events.back();
            int n = static_cast<int>(outcome.branches.size());
            if (depth + 1 > cfg.max_depth)
            {
                last.kind = EventKind::Flagged;
                last.reason = "branch depth limit " + std::to_string(cfg.max_depth) + " reached";
                outcome.branches.clear();
            }
            else if (leaves + n - 1 > cfg.max_leaves)
            {
                last.kind = EventKind::Flagged;
                last.reason = "branch leaf limit " + std::to_string(cfg.max_leaves) + " reached";
                outcome.branches.clear();
            }
        }
        double s_branch = ray.events.empty() ? job.s : ray.events.back().s;
        tree.nodes[static_cast<std::size_t>(job.node)].ray = std::move(ray);
        for (std::size_t b = 0; b < outcome.branches.size(); ++b)
        {
            BranchTree::Node child;
            child.parent = job.node;
            child.branch_index = static_cast<int>(b);
            child.depth = depth + 1;
            child.ray.layout = L;
            child.ray.direction = cfg.direction;
            int id = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back(std::move(child));
            tree.nodes[static_cast<std::size_t>(job.node)].children.push_back(id);
            queue.push_back({id, outcome.branches[b], s_branch, detail::PieceTracer::Mode::Flow, {}});
        }
        if (!outcome.branches.empty())
            leaves += static_cast<int>(outcome.branches.size()) - 1;
    }
    return tree;
}

//! Convenience: the single ray of a Specular trace (the first leaf otherwise).
inline Ray trace_ray(Chart const& chart, CotangentPoint const& q0, TraceConfig const& cfg)
{
    BranchTree t = trace(chart, q0, cfg);
    return path_ray(t, t.leaves().front());
}

}  // namespace brokenray
