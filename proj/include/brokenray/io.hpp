#pragma once

#include <cstdio>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "ray.hpp"
#include "verify.hpp"

namespace brokenray::io {

//! Shortest form that reads back to the same double: %.17g.
inline std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

template <class E, std::size_t N>
E enum_from(std::string const& s, E const (&all)[N], char const* what)
{
    for (E e : all)
        if (to_string(e) == s)
            return e;
    throw Error(ErrorCode::ParseError, std::string("unknown ") + what + " '" + s + "'");
}

inline void put_vec(std::ostream& os, Vec const& v)
{
    os << ' ' << v.size();
    for (int i = 0; i < v.size(); ++i)
        os << ' ' << fmt(v[i]);
}

class LineReader
{
  public:
    explicit LineReader(std::istream& is) : is_(is) {}

    std::istringstream next(char const* expected)
    {
        std::string line;
        do
        {
            if (!std::getline(is_, line))
                throw Error(ErrorCode::ParseError, std::string("unexpected end of input, wanted '") + expected + "'");
            ++line_no_;
        } while (line.empty() || line[0] == '#');
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag != expected)
            fail("expected '" + std::string(expected) + "', got '" + tag + "'");
        return ss;
    }

    [[noreturn]] void fail(std::string const& msg) const
    {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no_) + ": " + msg);
    }

    template <class T>
    T get(std::istringstream& ss)
    {
        T v{};
        if (!(ss >> v))
            fail("malformed field");
        return v;
    }

    double num(std::istringstream& ss)
    {
        std::string tok = get<std::string>(ss);
        char* end = nullptr;
        double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size())
            fail("bad number '" + tok + "'");
        return v;
    }

    Vec vec(std::istringstream& ss)
    {
        int n = get<int>(ss);
        if (n < 0)
            fail("negative length");
        Vec v(n);
        for (int i = 0; i < n; ++i)
            v[i] = num(ss);
        return v;
    }

  private:
    std::istream& is_;
    int line_no_ = 0;
};

}  // namespace detail

//---------------------------------------------------------------------------//
// Branch tree: lossless text form (dense output is not stored)
//---------------------------------------------------------------------------//
inline void write_tree(std::ostream& os, BranchTree const& tree)
{
    int k = tree.nodes.empty() ? 0 : tree.nodes.front().ray.layout.k;
    int l = tree.nodes.empty() ? 0 : tree.nodes.front().ray.layout.l;
    os << "tree " << std::quoted(tree.scenario) << ' ' << k << ' ' << l << ' ' << tree.nodes.size() << '\n';
    for (std::size_t id = 0; id < tree.nodes.size(); ++id)
    {
        auto const& n = tree.nodes[id];
        Ray const& r = n.ray;
        os << "node " << id << ' ' << n.parent << ' ' << n.branch_index << ' ' << n.depth << ' '
           << static_cast<int>(r.direction) << ' ' << r.segments.size() << ' ' << r.events.size() << ' '
           << r.warnings.size() << '\n';
        for (Segment const& sg : r.segments)
        {
            os << "segment " << to_string(sg.kind) << ' ' << sg.face.to_string() << ' ' << sg.hit_face.to_string()
               << ' ' << to_string(sg.terminal) << ' ' << fmt(sg.s_start) << ' ' << fmt(sg.s_end) << ' '
               << fmt(sg.max_drift) << ' ' << int(sg.drift_warning) << ' ' << int(sg.mirrored) << ' '
               << sg.knots.size() << '\n';
            for (Knot const& kn : sg.knots)
            {
                os << "knot " << fmt(kn.s);
                detail::put_vec(os, kn.z);
                detail::put_vec(os, kn.dz);
                os << '\n';
            }
        }
        for (Event const& e : r.events)
        {
            os << "event " << to_string(e.kind) << ' ' << fmt(e.s) << ' ' << e.face.to_string() << ' '
               << e.n_branches << ' ' << to_string(e.glancing.kind) << ' ' << fmt(e.glancing.second_derivative) << ' '
               << std::quoted(e.reason);
            detail::put_vec(os, e.lift_in);
            detail::put_vec(os, e.lift_out);
            detail::put_vec(os, e.z_left);
            detail::put_vec(os, e.z_right);
            os << '\n';
        }
        for (auto const& [s, msg] : r.warnings)
            os << "warning " << fmt(s) << ' ' << std::quoted(msg) << '\n';
    }
}

inline BranchTree read_tree(std::istream& is)
{
    static SegmentKind const seg_kinds[] = {SegmentKind::Interior, SegmentKind::Gliding};
    static Terminal const terminals[] = {Terminal::BoundaryHit, Terminal::TimeHorizon, Terminal::DomainExit,
                                         Terminal::Diffractive,  Terminal::BandExit,    Terminal::Handoff};
    static GlideKind const glide_kinds[] = {GlideKind::Gliding, GlideKind::Diffractive, GlideKind::Undetermined};
    detail::LineReader in(is);
    BranchTree tree;
    auto hs = in.next("tree");
    if (!(hs >> std::quoted(tree.scenario)))
        in.fail("missing scenario name");
    int k = in.get<int>(hs), l = in.get<int>(hs);
    std::size_t n_nodes = in.get<std::size_t>(hs);
    PhaseLayout L{k, l};
    auto face = [&](std::istringstream& ss) { return FaceId::from_string(in.get<std::string>(ss)); };
    for (std::size_t id = 0; id < n_nodes; ++id)
    {
        auto ns = in.next("node");
        if (in.get<std::size_t>(ns) != id)
            in.fail("node ids out of order");
        BranchTree::Node n;
        n.parent = in.get<int>(ns);
        n.branch_index = in.get<int>(ns);
        n.depth = in.get<int>(ns);
        n.ray.layout = L;
        n.ray.direction = in.get<int>(ns) < 0 ? Direction::Backward : Direction::Forward;
        std::size_t n_seg = in.get<std::size_t>(ns), n_ev = in.get<std::size_t>(ns), n_w = in.get<std::size_t>(ns);
        for (std::size_t i = 0; i < n_seg; ++i)
        {
            auto ss = in.next("segment");
            Segment sg;
            sg.kind = detail::enum_from(in.get<std::string>(ss), seg_kinds, "segment kind");
            sg.face = face(ss);
            sg.hit_face = face(ss);
            sg.terminal = detail::enum_from(in.get<std::string>(ss), terminals, "terminal");
            sg.s_start = in.num(ss);
            sg.s_end = in.num(ss);
            sg.max_drift = in.num(ss);
            sg.drift_warning = in.get<int>(ss) != 0;
            sg.mirrored = in.get<int>(ss) != 0;
            std::size_t n_knots = in.get<std::size_t>(ss);
            for (std::size_t q = 0; q < n_knots; ++q)
            {
                auto ks = in.next("knot");
                Knot kn;
                kn.s = in.num(ks);
                kn.z = in.vec(ks);
                kn.dz = in.vec(ks);
                sg.knots.push_back(std::move(kn));
            }
            n.ray.segments.push_back(std::move(sg));
        }
        for (std::size_t i = 0; i < n_ev; ++i)
        {
            auto es = in.next("event");
            Event e;
            e.kind = event_kind_from_string(in.get<std::string>(es));
            e.s = in.num(es);
            e.face = face(es);
            e.n_branches = in.get<int>(es);
            e.glancing.kind = detail::enum_from(in.get<std::string>(es), glide_kinds, "glancing kind");
            e.glancing.second_derivative = in.num(es);
            if (!(es >> std::quoted(e.reason)))
                in.fail("missing reason");
            e.lift_in = in.vec(es);
            e.lift_out = in.vec(es);
            e.z_left = in.vec(es);
            e.z_right = in.vec(es);
            n.ray.events.push_back(std::move(e));
        }
        for (std::size_t i = 0; i < n_w; ++i)
        {
            auto ws = in.next("warning");
            double s = in.num(ws);
            std::string msg;
            if (!(ws >> std::quoted(msg)))
                in.fail("missing warning text");
            n.ray.warnings.emplace_back(s, std::move(msg));
        }
        tree.nodes.push_back(std::move(n));
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id)
    {
        int p = tree.nodes[id].parent;
        if (p >= static_cast<int>(id))
            throw Error(ErrorCode::ParseError, "parent must precede child");
        if (p >= 0)
            tree.nodes[static_cast<std::size_t>(p)].children.push_back(static_cast<int>(id));
    }
    return tree;
}

inline std::string tree_to_string(BranchTree const& tree)
{
    std::ostringstream os;
    write_tree(os, tree);
    return os.str();
}

inline BranchTree tree_from_string(std::string const& text)
{
    std::istringstream is(text);
    return read_tree(is);
}

//---------------------------------------------------------------------------//
// Samples: one knot per line
//---------------------------------------------------------------------------//
inline void write_samples(std::ostream& os, BranchTree const& tree)
{
    if (tree.nodes.empty())
        return;
    PhaseLayout L = tree.nodes.front().ray.layout;
    os << "# branch segment s";
    for (int j = 0; j < L.k; ++j)
        os << " x" << j + 1;
    for (int i = 0; i < L.l; ++i)
        os << " y" << i + 1;
    os << " t";
    for (int j = 0; j < L.k; ++j)
        os << " xi" << j + 1;
    for (int i = 0; i < L.l; ++i)
        os << " zeta" << i + 1;
    os << " tau\n";
    for (std::size_t id = 0; id < tree.nodes.size(); ++id)
    {
        auto const& segs = tree.nodes[id].ray.segments;
        for (std::size_t si = 0; si < segs.size(); ++si)
            for (Knot const& kn : segs[si].knots)
            {
                os << id << ' ' << si << ' ' << fmt(kn.s);
                for (int c = 0; c < kn.z.size(); ++c)
                    os << ' ' << fmt(kn.z[c]);
                os << '\n';
            }
    }
}

//---------------------------------------------------------------------------//
// Summary document
//---------------------------------------------------------------------------//
inline nlohmann::ordered_json summary_json(BranchTree const& tree)
{
    nlohmann::ordered_json j;
    j["scenario"] = tree.scenario;
    if (!tree.nodes.empty())
    {
        j["k"] = tree.nodes.front().ray.layout.k;
        j["l"] = tree.nodes.front().ray.layout.l;
    }
    j["leaves"] = tree.leaves();
    auto nodes = nlohmann::ordered_json::array();
    for (std::size_t id = 0; id < tree.nodes.size(); ++id)
    {
        auto const& n = tree.nodes[id];
        nlohmann::ordered_json jn;
        jn["id"] = id;
        jn["parent"] = n.parent;
        jn["branch_index"] = n.branch_index;
        jn["depth"] = n.depth;
        jn["s_min"] = n.ray.segments.empty() ? 0.0 : n.ray.s_min();
        jn["s_max"] = n.ray.segments.empty() ? 0.0 : n.ray.s_max();
        jn["segments"] = n.ray.segments.size();
        auto evs = nlohmann::ordered_json::array();
        for (Event const& e : n.ray.events)
        {
            nlohmann::ordered_json je;
            je["kind"] = std::string(to_string(e.kind));
            je["s"] = e.s;
            je["face"] = e.face.to_string();
            if (e.kind == EventKind::CornerBranch)
                je["branches"] = e.n_branches;
            if (!e.reason.empty())
                je["reason"] = e.reason;
            evs.push_back(std::move(je));
        }
        jn["events"] = std::move(evs);
        auto ws = nlohmann::ordered_json::array();
        for (auto const& [s, msg] : n.ray.warnings)
            ws.push_back({{"s", s}, {"message", msg}});
        jn["warnings"] = std::move(ws);
        jn["children"] = n.children;
        nodes.push_back(std::move(jn));
    }
    j["nodes"] = std::move(nodes);
    return j;
}

//---------------------------------------------------------------------------//
// Property reports: one record per line
//---------------------------------------------------------------------------//
inline std::string report_line(PropertyReport const& r)
{
    std::ostringstream os;
    os << "check=" << r.name << " pass=" << (r.pass ? 1 : 0) << " ray=" << r.ray_id << " s=" << fmt(r.s)
       << " statistic=" << fmt(r.statistic) << " tolerance=" << fmt(r.tolerance);
    for (auto const& [key, v] : r.details)
        os << ' ' << key << '=' << fmt(v);
    return os.str();
}

inline void write_reports(std::ostream& os, std::vector<PropertyReport> const& reports)
{
    for (auto const& r : reports)
        os << report_line(r) << '\n';
}

}  // namespace brokenray::io
