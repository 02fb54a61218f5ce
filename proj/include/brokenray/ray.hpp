#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "boundary.hpp"
#include "error.hpp"
#include "geometry.hpp"
#include "hamiltonian.hpp"

namespace brokenray {

enum class EventKind { Reflection, CornerBranch, GlancingEnter, GlancingExit, TimeHorizon, DomainExit, Flagged };

inline std::string_view to_string(EventKind k)
{
    switch (k)
    {
        case EventKind::Reflection: return "reflection";
        case EventKind::CornerBranch: return "corner_branch";
        case EventKind::GlancingEnter: return "glancing_enter";
        case EventKind::GlancingExit: return "glancing_exit";
        case EventKind::TimeHorizon: return "time_horizon";
        case EventKind::DomainExit: return "domain_exit";
        case EventKind::Flagged: return "flagged";
    }
    return "?";
}

inline EventKind event_kind_from_string(std::string_view s)
{
    for (EventKind k : {EventKind::Reflection, EventKind::CornerBranch, EventKind::GlancingEnter,
                        EventKind::GlancingExit, EventKind::TimeHorizon, EventKind::DomainExit, EventKind::Flagged})
        if (to_string(k) == s)
            return k;
    throw Error(ErrorCode::ParseError, "unknown event kind '" + std::string(s) + "'");
}

/*!
 * Boundary or terminal event along a ray.
 *
 * `z_left` and `z_right` are the one-sided limits of the state at s (from
 * smaller and larger s). For a Reflection `lift_in`/`lift_out` hold the
 * face-normal ξ components before and after.
 */
struct Event
{
    EventKind kind = EventKind::TimeHorizon;
    double s = 0.0;
    FaceId face;
    Vec lift_in;
    Vec lift_out;
    int n_branches = 0;
    GlancingKind glancing;
    std::string reason;
    Vec z_left;
    Vec z_right;

    double t(PhaseLayout const& L) const { return z_right[L.t()]; }
};

struct Ray
{
    PhaseLayout layout;
    Direction direction = Direction::Forward;
    std::vector<Segment> segments;
    std::vector<Event> events;
    //! non-fatal diagnostics: (s, message)
    std::vector<std::pair<double, std::string>> warnings;

    double s_min() const
    {
        double m = std::numeric_limits<double>::infinity();
        for (auto const& sg : segments)
            m = std::min(m, sg.s_min());
        return m;
    }
    double s_max() const
    {
        double m = -std::numeric_limits<double>::infinity();
        for (auto const& sg : segments)
            m = std::max(m, sg.s_max());
        return m;
    }
    Event const& last_event() const { return events.back(); }
};

/*!
 * Tree of ray pieces. Node 0 is the trace from the initial point; each
 * CornerBranch event ends a piece and its children continue from the corner,
 * one per outgoing lift, in lift order.
 */
struct BranchTree
{
    struct Node
    {
        int parent = -1;
        int branch_index = 0;
        int depth = 0;
        Ray ray;
        std::vector<int> children;
    };

    std::string scenario;
    std::vector<Node> nodes;

    std::vector<int> leaves() const
    {
        std::vector<int> out;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].children.empty())
                out.push_back(static_cast<int>(i));
        return out;
    }
};

/*!
 * Root-to-leaf ray. CornerBranch events along the path become Reflections
 * carrying the parent's incoming lift and the child's outgoing lift.
 */
inline Ray path_ray(BranchTree const& tree, int leaf)
{
    std::vector<int> chain;
    for (int n = leaf; n >= 0; n = tree.nodes[static_cast<std::size_t>(n)].parent)
        chain.push_back(n);
    std::reverse(chain.begin(), chain.end());
    Ray out;
    out.layout = tree.nodes[static_cast<std::size_t>(chain.front())].ray.layout;
    out.direction = tree.nodes[static_cast<std::size_t>(chain.front())].ray.direction;
    for (std::size_t c = 0; c < chain.size(); ++c)
    {
        Ray const& r = tree.nodes[static_cast<std::size_t>(chain[c])].ray;
        for (auto const& sg : r.segments)
            out.segments.push_back(sg);
        for (auto const& w : r.warnings)
            out.warnings.push_back(w);
        for (auto const& ev : r.events)
        {
            if (ev.kind == EventKind::CornerBranch && c + 1 < chain.size())
            {
                Ray const& child = tree.nodes[static_cast<std::size_t>(chain[c + 1])].ray;
                Event e = ev;
                e.kind = EventKind::Reflection;
                e.n_branches = 0;
                Vec const& z0 = child.segments.front().knots.front().z;
                e.z_right = z0;
                e.lift_out = face_components(out.layout, e.face, z0);
                out.events.push_back(std::move(e));
            }
            else
                out.events.push_back(ev);
        }
    }
    return out;
}

//! Sample a ray at parameters within its range; at events the right limit unless `left`.
inline std::vector<CotangentPoint> sample_ray(Ray const& ray, std::vector<double> const& s_values, bool left = false)
{
    std::vector<CotangentPoint> out;
    out.reserve(s_values.size());
    double lo = ray.s_min(), hi = ray.s_max();
    for (double s : s_values)
    {
        if (!(s >= lo && s <= hi))
            throw Error(ErrorCode::OutOfRange, "sample parameter outside the ray");
        Segment const* best = nullptr;
        double best_key = 0.0;
        for (auto const& sg : ray.segments)
        {
            if (s < sg.s_min() || s > sg.s_max())
                continue;
            double mid = 0.5 * (sg.s_min() + sg.s_max());
            double key = left ? -mid : mid;
            if (!best || key > best_key)
            {
                best = &sg;
                best_key = key;
            }
        }
        out.push_back(ray.layout.unpack(best->state_at(s)));
    }
    return out;
}

inline std::vector<Vec> sample_states(Ray const& ray, std::vector<double> const& s_values, bool left = false)
{
    std::vector<Vec> out;
    for (auto const& q : sample_ray(ray, s_values, left))
        out.push_back(ray.layout.pack(q));
    return out;
}

namespace detail {

inline Vec negate_fiber(PhaseLayout const& L, Vec z)
{
    if (z.size() == 0)
        return z;
    z.tail(L.half()) = -z.tail(L.half());
    return z;
}

}  // namespace detail

/*!
 * Time reversal s → −s with the fiber (ξ, ζ, τ) negated. Segments and events
 * appear in reversed order; one-sided limits and lifts swap roles. Applying
 * it twice restores the ray exactly.
 */
inline Ray reverse(Ray const& ray)
{
    PhaseLayout L = ray.layout;
    Ray out;
    out.layout = L;
    out.direction = ray.direction == Direction::Forward ? Direction::Backward : Direction::Forward;
    for (auto it = ray.segments.rbegin(); it != ray.segments.rend(); ++it)
    {
        Segment sg = *it;
        sg.s_start = -it->s_end;
        sg.s_end = -it->s_start;
        std::reverse(sg.knots.begin(), sg.knots.end());
        for (Knot& kn : sg.knots)
        {
            kn.s = -kn.s;
            kn.z = detail::negate_fiber(L, kn.z);
            // d/ds of z(−s) with the fiber negated: base rates flip, fiber rates keep sign
            Vec d = -kn.dz;
            d.tail(L.half()) = -d.tail(L.half());
            kn.dz = d;
        }
        sg.mirrored = !it->mirrored;
        out.segments.push_back(std::move(sg));
    }
    for (auto it = ray.events.rbegin(); it != ray.events.rend(); ++it)
    {
        Event e = *it;
        e.s = -it->s;
        e.z_left = detail::negate_fiber(L, it->z_right);
        e.z_right = detail::negate_fiber(L, it->z_left);
        e.lift_in = -it->lift_out;
        e.lift_out = -it->lift_in;
        out.events.push_back(std::move(e));
    }
    for (auto it = ray.warnings.rbegin(); it != ray.warnings.rend(); ++it)
        out.warnings.push_back({-it->first, it->second});
    return out;
}

}  // namespace brokenray
