#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "boundary.hpp"
#include "error.hpp"
#include "expression.hpp"
#include "geometry.hpp"
#include "symbols.hpp"
#include "tracer.hpp"
#include "verify.hpp"

namespace brokenray {

//! Scenario parse or validation failure at a 1-based line and column.
class ScenarioError : public Error
{
  public:
    ScenarioError(int line, int column, std::string const& msg)
        : Error(ErrorCode::ParseError, std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
          line_(line), column_(column), message_(msg)
    {
    }
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }
    std::string const& message() const noexcept { return message_; }

  private:
    int line_;
    int column_;
    std::string message_;
};

/*!
 * Initial points generated from a center by varying one coordinate; with
 * `solve_xi` the normal covector is rescaled along `xi_direction` (default:
 * the center's ξ) so every member lies on Char(P).
 */
struct FamilySpec
{
    CotangentPoint center;
    std::string coord = "zeta1";
    std::vector<double> values;
    bool solve_xi = true;
    std::optional<Vec> xi_direction;

    std::vector<CotangentPoint> members(Chart const& chart) const
    {
        PhaseLayout L = chart.layout();
        auto slot = [&]() -> int {
            if (coord == "t")
                return L.t();
            if (coord == "tau")
                return L.tau();
            for (int j = 0; j < L.k; ++j)
            {
                if (coord == "x" + std::to_string(j + 1))
                    return L.x(j);
                if (coord == "xi" + std::to_string(j + 1))
                    return L.xi(j);
            }
            for (int i = 0; i < L.l; ++i)
            {
                if (coord == "y" + std::to_string(i + 1))
                    return L.y(i);
                if (coord == "zeta" + std::to_string(i + 1))
                    return L.zeta(i);
            }
            throw Error(ErrorCode::InvalidArgument, "unknown family coordinate '" + coord + "'");
        }();
        Vec w = xi_direction ? *xi_direction : center.xi;
        if (solve_xi && !(w.norm() > 0))
            throw Error(ErrorCode::InvalidArgument, "family needs a nonzero xi direction");
        std::vector<CotangentPoint> out;
        for (double v : values)
        {
            Vec z = L.pack(center);
            z[slot] = v;
            if (solve_xi && !detail::characteristic_xi(chart, z, w / w.norm()))
                throw Error(ErrorCode::InvalidArgument, "family member has no characteristic lift");
            out.push_back(L.unpack(z));
        }
        return out;
    }
};

struct VerifySpec
{
    double lipschitz_M = 10.0;
    double delta_conv = 1e-3;
    ParameterBox box;
    int n_grid = 501;
    std::optional<FamilySpec> family;
    //! grazing family and the glancing point whose glide is the candidate limit
    std::optional<FamilySpec> limit;
    std::optional<CompressedPoint> limit_candidate;
    double limit_s_end = 1.0;
};

struct HyperbolicSymbolSpec
{
    CommutantParams params;
    SampleSpec samples;
};

struct GlancingSymbolSpec
{
    CommutantParams params;
    double span = 1.0;
    GridSpec grid;
    int refine = 2;  //!< grid refined to refine·(n − 1) + 1 points per axis
    int n_samples = 10000;
};

//! Grid of boundary covectors varying one ζ component.
struct ClassifySpec
{
    CompressedPoint base;
    int zeta_index = 0;
    double lo = 0.0;
    double hi = 1.5;
    int n = 16;
};

struct Scenario
{
    std::string name;
    Chart chart;
    std::vector<CotangentPoint> points;
    TraceConfig trace;
    VerifySpec verify;
    std::optional<HyperbolicSymbolSpec> hyperbolic;
    std::optional<GlancingSymbolSpec> glancing;
    std::optional<ClassifySpec> classify;
};

namespace detail {

class YamlReader
{
  public:
    [[noreturn]] static void fail(YAML::Node const& n, std::string const& msg)
    {
        YAML::Mark m = n.Mark();
        throw ScenarioError(m.line + 1, m.column + 1, msg);
    }

    static void keys(YAML::Node const& n, std::set<std::string> const& allowed, char const* where)
    {
        if (!n.IsMap())
            fail(n, std::string(where) + " must be a mapping");
        for (auto it = n.begin(); it != n.end(); ++it)
        {
            auto key = it->first.as<std::string>();
            if (!allowed.count(key))
                fail(it->first, "unknown key '" + key + "' in " + where);
        }
    }

    static YAML::Node need(YAML::Node const& n, char const* key)
    {
        YAML::Node v = n[key];
        if (!v)
            fail(n, std::string("missing key '") + key + "'");
        return v;
    }

    template <class T>
    static T as(YAML::Node const& n, char const* what)
    {
        try
        {
            return n.as<T>();
        }
        catch (YAML::Exception const&)
        {
            fail(n, std::string("bad value for ") + what);
        }
    }

    template <class T>
    static T get(YAML::Node const& n, char const* key, T fallback)
    {
        YAML::Node v = n[key];
        return v ? as<T>(v, key) : fallback;
    }

    static Vec vec(YAML::Node const& n, char const* what, int expected = -1)
    {
        if (!n.IsSequence())
            fail(n, std::string(what) + " must be a list");
        Vec v(static_cast<int>(n.size()));
        for (std::size_t i = 0; i < n.size(); ++i)
            v[static_cast<int>(i)] = as<double>(n[i], what);
        if (expected >= 0 && v.size() != expected)
            fail(n, std::string(what) + " needs " + std::to_string(expected) + " entries");
        return v;
    }

    static Vec vec_or(YAML::Node const& n, char const* key, int expected)
    {
        YAML::Node v = n[key];
        if (!v)
        {
            if (expected == 0)
                return Vec(0);
            fail(n, std::string("missing key '") + key + "'");
        }
        return vec(v, key, expected);
    }

    static std::vector<Expression> exprs(YAML::Node const& parent, char const* what, std::size_t expected,
                                         std::vector<std::string> const& vars)
    {
        YAML::Node n = parent[what];
        if (!n)
        {
            if (expected == 0)
                return {};
            fail(parent, std::string("missing metric entry ") + what);
        }
        if (!n.IsSequence() || n.size() != expected)
            fail(n, std::string(what) + " needs " + std::to_string(expected) + " expressions (row-major)");
        std::vector<Expression> out;
        for (std::size_t i = 0; i < n.size(); ++i)
        {
            YAML::Node e = n[i];
            std::string text = as<std::string>(e, what);
            try
            {
                out.push_back(Expression::parse(text, vars));
            }
            catch (ExpressionError const& err)
            {
                YAML::Mark m = e.Mark();
                bool quoted = e.Tag() == "!";
                throw ScenarioError(m.line + 1, m.column + static_cast<int>(err.column()) + (quoted ? 1 : 0),
                                    std::string(what) + ": " + err.what());
            }
        }
        return out;
    }

    static CotangentPoint point(YAML::Node const& n, int k, int l)
    {
        keys(n, {"x", "y", "t", "xi", "zeta", "tau"}, "point");
        CotangentPoint q;
        q.x = vec_or(n, "x", k);
        q.y = vec_or(n, "y", l);
        q.t = get<double>(n, "t", 0.0);
        q.xi = vec_or(n, "xi", k);
        q.zeta = vec_or(n, "zeta", l);
        q.tau = get<double>(n, "tau", 1.0);
        return q;
    }

    static CompressedPoint compressed(YAML::Node const& n, int k, int l)
    {
        keys(n, {"face", "x_free", "y", "t", "xi_free", "zeta", "tau"}, "boundary point");
        CompressedPoint q;
        try
        {
            q.face = FaceId::from_string(as<std::string>(need(n, "face"), "face"));
        }
        catch (Error const& e)
        {
            fail(n["face"], e.what());
        }
        int free = k - q.face.codim();
        q.x_free = vec_or(n, "x_free", free);
        q.y = vec_or(n, "y", l);
        q.t = get<double>(n, "t", 0.0);
        q.xi_free = vec_or(n, "xi_free", free);
        q.zeta = vec_or(n, "zeta", l);
        q.tau = get<double>(n, "tau", 1.0);
        return q;
    }

    static FamilySpec family(YAML::Node const& n, int k, int l)
    {
        keys(n, {"center", "coord", "values", "from", "to", "count", "solve_xi", "xi_direction"}, "family");
        FamilySpec f;
        f.center = point(need(n, "center"), k, l);
        f.coord = get<std::string>(n, "coord", "zeta1");
        if (n["values"])
        {
            Vec v = vec(n["values"], "values");
            f.values.assign(v.data(), v.data() + v.size());
        }
        else
        {
            double a = as<double>(need(n, "from"), "from"), b = as<double>(need(n, "to"), "to");
            int c = as<int>(need(n, "count"), "count");
            if (c < 1)
                fail(n["count"], "count must be positive");
            for (int i = 0; i < c; ++i)
                f.values.push_back(c == 1 ? a : a + (b - a) * i / (c - 1));
        }
        f.solve_xi = get<bool>(n, "solve_xi", true);
        if (n["xi_direction"])
            f.xi_direction = vec(n["xi_direction"], "xi_direction", k);
        return f;
    }

    static CommutantParams params(YAML::Node const& n, CompressedPoint q0)
    {
        CommutantParams p;
        p.q0 = std::move(q0);
        p.delta = get<double>(n, "delta", p.delta);
        p.eps = get<double>(n, "eps", p.eps);
        p.A0 = get<double>(n, "A0", p.A0);
        p.c1 = get<double>(n, "c1", p.c1);
        return p;
    }
};

inline void read_trace(YAML::Node const& n, TraceConfig& cfg)
{
    using R = YamlReader;
    R::keys(n,
            {"max_time", "branch_rule", "seed", "direction", "max_depth", "max_leaves", "rel_tol", "abs_tol",
             "max_step", "event_tol", "char_tol", "p_drift_warn", "theta", "theta_g", "rescale_fiber", "max_steps"},
            "trace");
    auto& ic = cfg.integrator;
    ic.max_time = R::get<double>(n, "max_time", ic.max_time);
    ic.rel_tol = R::get<double>(n, "rel_tol", ic.rel_tol);
    ic.abs_tol = R::get<double>(n, "abs_tol", ic.abs_tol);
    ic.max_step = R::get<double>(n, "max_step", ic.max_step);
    ic.event_tol = R::get<double>(n, "event_tol", ic.event_tol);
    ic.p_drift_warn = R::get<double>(n, "p_drift_warn", ic.p_drift_warn);
    ic.rescale_fiber = R::get<bool>(n, "rescale_fiber", ic.rescale_fiber);
    ic.max_steps = R::get<long>(n, "max_steps", ic.max_steps);
    cfg.char_tol = R::get<double>(n, "char_tol", cfg.char_tol);
    cfg.boundary.theta = R::get<double>(n, "theta", cfg.boundary.theta);
    cfg.boundary.theta_g = R::get<double>(n, "theta_g", cfg.boundary.theta_g);
    cfg.seed = R::get<std::uint64_t>(n, "seed", cfg.seed);
    cfg.max_depth = R::get<int>(n, "max_depth", cfg.max_depth);
    cfg.max_leaves = R::get<int>(n, "max_leaves", cfg.max_leaves);
    if (n["branch_rule"])
    {
        try
        {
            cfg.rule = BranchRule::parse(R::as<std::string>(n["branch_rule"], "branch_rule"));
        }
        catch (Error const& e)
        {
            R::fail(n["branch_rule"], e.what());
        }
    }
    if (n["direction"])
    {
        auto d = R::as<std::string>(n["direction"], "direction");
        if (d == "forward")
            cfg.direction = Direction::Forward;
        else if (d == "backward")
            cfg.direction = Direction::Backward;
        else
            R::fail(n["direction"], "direction must be forward or backward");
    }
}

}  // namespace detail

/*!
 * Parse a scenario document. The chart is built (and validated) before
 * anything else is read.
 */
inline Scenario parse_scenario(std::string const& text)
{
    using R = detail::YamlReader;
    YAML::Node root;
    try
    {
        root = YAML::Load(text);
    }
    catch (YAML::ParserException const& e)
    {
        throw ScenarioError(e.mark.line + 1, e.mark.column + 1, e.msg);
    }
    if (!root || !root.IsMap())
        throw ScenarioError(1, 1, "scenario must be a mapping");
    R::keys(root, {"name", "chart", "initial", "trace", "verify", "symbols", "classify"}, "scenario");
    Scenario sc;
    sc.name = R::as<std::string>(R::need(root, "name"), "name");

    YAML::Node c = R::need(root, "chart");
    R::keys(c, {"k", "l", "domain", "metric", "upper_walls"}, "chart");
    int k = R::as<int>(R::need(c, "k"), "k"), l = R::as<int>(R::need(c, "l"), "l");
    if (k < 1 || k > 31 || l < 0)
        R::fail(c, "need 1 <= k <= 31 and l >= 0");
    YAML::Node d = R::need(c, "domain");
    R::keys(d, {"x_max", "y_min", "y_max", "t_min", "t_max"}, "domain");
    Domain dom;
    dom.x_max = R::vec(R::need(d, "x_max"), "x_max", k);
    dom.y_min = R::vec_or(d, "y_min", l);
    dom.y_max = R::vec_or(d, "y_max", l);
    dom.t_min = R::as<double>(R::need(d, "t_min"), "t_min");
    dom.t_max = R::as<double>(R::need(d, "t_max"), "t_max");
    YAML::Node m = R::need(c, "metric");
    R::keys(m, {"A", "B", "C"}, "metric");
    auto vars = Chart::variable_names(k, l);
    MetricCoeffs mc;
    auto kk = static_cast<std::size_t>(k), ll = static_cast<std::size_t>(l);
    mc.A = R::exprs(m, "A", kk * kk, vars);
    mc.B = R::exprs(m, "B", ll * ll, vars);
    mc.C = R::exprs(m, "C", kk * ll, vars);
    std::vector<bool> walls;
    if (c["upper_walls"])
    {
        YAML::Node w = c["upper_walls"];
        if (!w.IsSequence() || w.size() != kk)
            R::fail(w, "upper_walls needs k entries");
        for (std::size_t j = 0; j < kk; ++j)
            walls.push_back(R::as<bool>(w[j], "upper_walls"));
    }
    try
    {
        sc.chart = Chart(sc.name, k, l, dom, mc, walls);
    }
    catch (Error const& e)
    {
        R::fail(c, e.what());
    }

    if (root["trace"])
        detail::read_trace(root["trace"], sc.trace);
    try
    {
        sc.trace.validate();
    }
    catch (Error const& e)
    {
        R::fail(root["trace"] ? root["trace"] : root, e.what());
    }

    if (YAML::Node in = root["initial"])
    {
        if (!in.IsSequence())
            R::fail(in, "initial must be a list of points");
        for (std::size_t i = 0; i < in.size(); ++i)
        {
            CotangentPoint q = R::point(in[i], k, l);
            try
            {
                require_in_domain(sc.chart, q);
                if (q.tau == 0.0)
                    throw Error(ErrorCode::InvalidArgument, "tau must be nonzero");
                double rel = std::abs(principal_symbol(sc.chart, sc.chart.layout().pack(q))) / (q.tau * q.tau);
                if (rel > sc.trace.char_tol && !sc.trace.integrator.rescale_fiber)
                    throw Error(ErrorCode::InvalidArgument,
                                "point is not characteristic: |p|/tau^2 = " + std::to_string(rel));
            }
            catch (Error const& e)
            {
                R::fail(in[i], e.what());
            }
            sc.points.push_back(std::move(q));
        }
    }

    if (YAML::Node v = root["verify"])
    {
        R::keys(v, {"lipschitz_M", "delta_conv", "box", "n_grid", "family", "limit", "limit_candidate", "limit_s_end"},
                "verify");
        VerifySpec& vs = sc.verify;
        vs.lipschitz_M = R::get<double>(v, "lipschitz_M", vs.lipschitz_M);
        vs.delta_conv = R::get<double>(v, "delta_conv", vs.delta_conv);
        vs.n_grid = R::get<int>(v, "n_grid", vs.n_grid);
        vs.limit_s_end = R::get<double>(v, "limit_s_end", vs.limit_s_end);
        if (YAML::Node b = v["box"])
        {
            R::keys(b, {"s_a", "s_b", "x_lo", "x_hi", "y_lo", "y_hi", "t_lo", "t_hi"}, "box");
            vs.box.s_a = R::get<double>(b, "s_a", vs.box.s_a);
            vs.box.s_b = R::get<double>(b, "s_b", vs.box.s_b);
            if (b["x_lo"])
                vs.box.x_lo = R::vec(b["x_lo"], "x_lo", k);
            if (b["x_hi"])
                vs.box.x_hi = R::vec(b["x_hi"], "x_hi", k);
            if (b["y_lo"])
                vs.box.y_lo = R::vec(b["y_lo"], "y_lo", l);
            if (b["y_hi"])
                vs.box.y_hi = R::vec(b["y_hi"], "y_hi", l);
            vs.box.t_lo = R::get<double>(b, "t_lo", vs.box.t_lo);
            vs.box.t_hi = R::get<double>(b, "t_hi", vs.box.t_hi);
        }
        if (v["family"])
            vs.family = R::family(v["family"], k, l);
        if (v["limit"])
            vs.limit = R::family(v["limit"], k, l);
        if (v["limit_candidate"])
            vs.limit_candidate = R::compressed(v["limit_candidate"], k, l);
        if (vs.limit.has_value() != vs.limit_candidate.has_value())
            R::fail(v, "limit and limit_candidate go together");
        try
        {
            if (vs.family)
                (void)vs.family->members(sc.chart);
            if (vs.limit)
                (void)vs.limit->members(sc.chart);
        }
        catch (Error const& e)
        {
            R::fail(v, e.what());
        }
    }

    if (YAML::Node s = root["symbols"])
    {
        R::keys(s, {"hyperbolic", "glancing"}, "symbols");
        if (YAML::Node h = s["hyperbolic"])
        {
            R::keys(h, {"q0", "delta", "eps", "A0", "c1", "samples", "estimate_samples", "seed"}, "hyperbolic");
            HyperbolicSymbolSpec hs;
            hs.params = R::params(h, R::compressed(R::need(h, "q0"), k, l));
            hs.samples.n_support = R::get<int>(h, "samples", hs.samples.n_support);
            hs.samples.n_estimate = R::get<int>(h, "estimate_samples", hs.samples.n_estimate);
            hs.samples.seed = R::get<std::uint64_t>(h, "seed", hs.samples.seed);
            try
            {
                hs.params.validate(false);
            }
            catch (Error const& e)
            {
                R::fail(h, e.what());
            }
            sc.hyperbolic = hs;
        }
        if (YAML::Node g = s["glancing"])
        {
            R::keys(g, {"q0", "delta", "eps", "A0", "c1", "span", "grid_n", "grid_radius", "grid_xi_radius", "refine",
                        "samples"},
                    "glancing");
            GlancingSymbolSpec gs;
            gs.params = R::params(g, R::compressed(R::need(g, "q0"), k, l));
            gs.span = R::get<double>(g, "span", gs.span);
            gs.grid.n = R::get<int>(g, "grid_n", gs.grid.n);
            gs.grid.radius = R::get<double>(g, "grid_radius", gs.grid.radius);
            gs.grid.xi_radius = R::get<double>(g, "grid_xi_radius", gs.grid.xi_radius);
            gs.refine = R::get<int>(g, "refine", gs.refine);
            gs.n_samples = R::get<int>(g, "samples", gs.n_samples);
            try
            {
                gs.params.validate(true);
            }
            catch (Error const& e)
            {
                R::fail(g, e.what());
            }
            sc.glancing = gs;
        }
    }

    if (YAML::Node g = root["classify"])
    {
        R::keys(g, {"base", "zeta_index", "from", "to", "count"}, "classify");
        ClassifySpec cs;
        cs.base = R::compressed(R::need(g, "base"), k, l);
        cs.zeta_index = R::get<int>(g, "zeta_index", 1) - 1;
        if (cs.zeta_index < 0 || cs.zeta_index >= l)
            R::fail(g, "zeta_index out of range");
        cs.lo = R::get<double>(g, "from", cs.lo);
        cs.hi = R::get<double>(g, "to", cs.hi);
        cs.n = R::get<int>(g, "count", cs.n);
        if (cs.n < 1)
            R::fail(g, "count must be positive");
        sc.classify = cs;
    }
    return sc;
}

inline Scenario load_scenario(std::string const& path)
{
    std::ifstream f(path);
    if (!f)
        throw Error(ErrorCode::InvalidArgument, "cannot read scenario file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_scenario(ss.str());
}

}  // namespace brokenray
