#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "brokenray.hpp"

namespace brokenray::cli {

//! Exit codes of `run`.
enum Exit : int { Ok = 0, InputError = 1, PropertyFailed = 2 };

struct Options
{
    std::string scenario;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<double> max_time;
    std::optional<std::string> branch_rule;
    std::optional<double> tol_rel, tol_abs, tol_event, tol_char, tol_max_step, tol_theta, tol_theta_g, tol_p_drift;
    int point = 0;
    std::string suite = "core";
    int random = 0;
};

namespace detail {

inline void apply_overrides(Options const& o, TraceConfig& cfg)
{
    auto& ic = cfg.integrator;
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.max_time)
        ic.max_time = *o.max_time;
    if (o.branch_rule)
        cfg.rule = BranchRule::parse(*o.branch_rule);
    if (o.tol_rel)
        ic.rel_tol = *o.tol_rel;
    if (o.tol_abs)
        ic.abs_tol = *o.tol_abs;
    if (o.tol_event)
        ic.event_tol = *o.tol_event;
    if (o.tol_char)
        cfg.char_tol = *o.tol_char;
    if (o.tol_max_step)
        ic.max_step = *o.tol_max_step;
    if (o.tol_theta)
        cfg.boundary.theta = *o.tol_theta;
    if (o.tol_theta_g)
        cfg.boundary.theta_g = *o.tol_theta_g;
    if (o.tol_p_drift)
        ic.p_drift_warn = *o.tol_p_drift;
    cfg.validate();
}

inline std::filesystem::path out_file(Options const& o, char const* name)
{
    std::filesystem::create_directories(o.out_dir);
    return std::filesystem::path(o.out_dir) / name;
}

inline std::ofstream open_out(Options const& o, char const* name)
{
    auto path = out_file(o, name);
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorCode::InvalidArgument, "cannot write '" + path.string() + "'");
    return f;
}

inline int emit_reports(Options const& o, char const* file, std::vector<PropertyReport> const& reps, std::ostream& out)
{
    auto f = open_out(o, file);
    io::write_reports(f, reps);
    int failed = 0;
    for (auto const& r : reps)
    {
        out << io::report_line(r) << '\n';
        failed += r.pass ? 0 : 1;
    }
    out << reps.size() << " checks, " << failed << " failed\n";
    return failed ? PropertyFailed : Ok;
}

inline CotangentPoint pick_point(Scenario const& sc, int i)
{
    if (i < 0 || i >= static_cast<int>(sc.points.size()))
        throw Error(ErrorCode::InvalidArgument, "scenario has no initial point " + std::to_string(i));
    return sc.points[static_cast<std::size_t>(i)];
}

//---------------------------------------------------------------------------//
inline int cmd_trace(Scenario const& sc, Options const& o, std::ostream& out)
{
    BranchTree tree = trace(sc.chart, pick_point(sc, o.point), sc.trace, sc.name);
    {
        auto f = open_out(o, "tree.txt");
        io::write_tree(f, tree);
    }
    {
        auto f = open_out(o, "samples.txt");
        io::write_samples(f, tree);
    }
    {
        auto f = open_out(o, "summary.json");
        f << io::summary_json(tree).dump(2) << '\n';
    }
    for (std::size_t id = 0; id < tree.nodes.size(); ++id)
    {
        auto const& n = tree.nodes[id];
        out << "node " << id << " parent " << n.parent << " events";
        for (Event const& e : n.ray.events)
            out << ' ' << to_string(e.kind) << '@' << io::fmt(e.s);
        out << '\n';
    }
    out << tree.leaves().size() << " leaves\n";
    return Ok;
}

inline int cmd_classify(Scenario const& sc, Options const& o, std::ostream& out)
{
    if (!sc.classify)
        throw Error(ErrorCode::InvalidArgument, "scenario has no classify section");
    ClassifySpec const& cs = *sc.classify;
    auto f = open_out(o, "classify.txt");
    f << "# zeta kind margin tolerance\n";
    out << "# zeta kind margin tolerance\n";
    for (int i = 0; i < cs.n; ++i)
    {
        CompressedPoint q = cs.base;
        double v = cs.n == 1 ? cs.lo : cs.lo + (cs.hi - cs.lo) * i / (cs.n - 1);
        q.zeta[cs.zeta_index] = v;
        Classification c = classify(sc.chart, q, sc.trace.boundary);
        std::string line = io::fmt(v) + ' ' + std::string(to_string(c.kind)) + ' ' + io::fmt(c.margin) + ' '
                           + io::fmt(c.tolerance);
        f << line << '\n';
        out << line << '\n';
    }
    return Ok;
}

//! Worst one-sided report for f over every reflection of the ray.
inline PropertyReport one_sided_all(Chart const& chart, Ray const& ray, PiFunction const& f, int id)
{
    PropertyReport worst;
    worst.name = "one_sided_" + f.name;
    worst.tolerance = 1e-4;
    worst.ray_id = id;
    worst.pass = true;
    int n = 0;
    for (std::size_t i = 0; i < ray.events.size(); ++i)
    {
        if (ray.events[i].kind != EventKind::Reflection)
            continue;
        ++n;
        PropertyReport r = check_one_sided(chart, ray, i, f);
        if (n == 1 || r.statistic > worst.statistic)
        {
            worst.statistic = r.statistic;
            worst.s = r.s;
        }
        worst.pass = worst.pass && r.pass;
    }
    worst.details = {{"reflections", static_cast<double>(n)}};
    return worst;
}

inline std::vector<PropertyReport> suite_core(Scenario const& sc)
{
    std::vector<PropertyReport> reps;
    PhaseLayout L = sc.chart.layout();
    std::vector<std::string> fs = {"t"};
    for (int i = 0; i < L.l; ++i)
        fs.push_back("y" + std::to_string(i + 1));
    for (int i = 0; i < L.l; ++i)
        fs.push_back("zeta" + std::to_string(i + 1));
    fs.push_back("eta");
    TraceConfig cfg = sc.trace;
    cfg.rule = BranchRule::specular();
    for (std::size_t id = 0; id < sc.points.size(); ++id)
    {
        int rid = static_cast<int>(id);
        BranchTree t1 = trace(sc.chart, sc.points[id], cfg, sc.name);
        BranchTree t2 = trace(sc.chart, sc.points[id], cfg, sc.name);
        Ray ray = path_ray(t1, t1.leaves().front());
        reps.push_back(check_conservation(sc.chart, ray, rid));
        reps.push_back(check_leaves_face(sc.chart, ray, cfg.integrator.event_tol, rid));
        for (auto const& name : fs)
            reps.push_back(one_sided_all(sc.chart, ray, pi_function(L, name), rid));
        reps.push_back(check_reversal(sc.chart, ray, cfg, rid));
        PropertyReport det;
        det.name = "determinism";
        det.ray_id = rid;
        det.statistic = io::tree_to_string(t1) == io::tree_to_string(t2) ? 0.0 : 1.0;
        PropertyReport rt;
        rt.name = "round_trip";
        rt.ray_id = rid;
        std::string text = io::tree_to_string(t1);
        rt.statistic = io::tree_to_string(io::tree_from_string(text)) == text ? 0.0 : 1.0;
        det.finish();
        rt.finish();
        reps.push_back(det);
        reps.push_back(rt);
    }
    return reps;
}

inline std::vector<Ray> trace_family(Scenario const& sc, FamilySpec const& fam, double max_time)
{
    TraceConfig cfg = sc.trace;
    cfg.rule = BranchRule::specular();
    cfg.integrator.max_time = max_time;
    std::vector<Ray> rays;
    for (auto const& q : fam.members(sc.chart))
        rays.push_back(trace_ray(sc.chart, q, cfg));
    return rays;
}

inline std::vector<PropertyReport> suite_lipschitz(Scenario const& sc)
{
    VerifySpec const& v = sc.verify;
    if (!v.family)
        throw Error(ErrorCode::InvalidArgument, "scenario declares no verify.family");
    auto rays = trace_family(sc, *v.family, std::max(sc.trace.integrator.max_time, v.box.s_b));
    std::vector<std::string> coords = {"x", "y", "t", "zeta", "tau"};
    PropertyReport coarse = check_lipschitz(rays, coords, v.box, v.lipschitz_M, v.n_grid);
    PropertyReport fine = check_lipschitz(rays, coords, v.box, v.lipschitz_M, 4 * (v.n_grid - 1) + 1);
    fine.name = "lipschitz_refined";
    PropertyReport stab;
    stab.name = "lipschitz_stability";
    stab.tolerance = 0.05;
    for (std::size_t i = 0; i < coords.size(); ++i)
    {
        double a = coarse.details[i].second, b = fine.details[i].second;
        double rel = std::abs(b - a) / std::max(std::abs(a), 1e-300);
        if (a == 0.0 && b == 0.0)
            rel = 0.0;
        stab.details.push_back({"rel_change_" + coords[i], rel});
        if (!std::isfinite(a) || !std::isfinite(b))
            rel = std::numeric_limits<double>::infinity();
        stab.statistic = std::max(stab.statistic, rel);
    }
    stab.finish();
    return {coarse, fine, stab};
}

inline std::vector<PropertyReport> suite_limit(Scenario const& sc)
{
    VerifySpec const& v = sc.verify;
    if (!v.limit || !v.limit_candidate)
        throw Error(ErrorCode::InvalidArgument, "scenario declares no verify.limit");
    auto fam = trace_family(sc, *v.limit, v.limit_s_end);
    TraceConfig cfg = sc.trace;
    cfg.integrator.max_time = v.limit_s_end;
    CompressedPoint const& c = *v.limit_candidate;
    Vec z = canonical_lift(sc.chart, c.face, lift_state(sc.chart, c, Vec::Zero(c.face.codim())));
    Ray cand = trace_ray(sc.chart, sc.chart.layout().unpack(z), cfg);
    UniformLimitReport u = check_uniform_limit(sc.chart, fam, cand, 0.0, v.limit_s_end, v.delta_conv, v.n_grid);
    u.conservation.name = "limit_candidate_conservation";
    u.leaves.name = "limit_candidate_leaves_face";
    return {u.summary, u.conservation, u.leaves};
}

inline int cmd_verify(Scenario const& sc, Options const& o, std::ostream& out)
{
    std::vector<PropertyReport> reps;
    auto add = [&](std::vector<PropertyReport> v) { reps.insert(reps.end(), v.begin(), v.end()); };
    bool all = o.suite == "all";
    if (o.suite == "core" || all)
        add(suite_core(sc));
    if (o.suite == "lipschitz" || (all && sc.verify.family))
        add(suite_lipschitz(sc));
    if (o.suite == "limit" || (all && sc.verify.limit))
        add(suite_limit(sc));
    if (!all && o.suite != "core" && o.suite != "lipschitz" && o.suite != "limit")
        throw Error(ErrorCode::InvalidArgument, "unknown suite '" + o.suite + "'");
    return emit_reports(o, "report.txt", reps, out);
}

//---------------------------------------------------------------------------//
inline std::vector<PropertyReport> symbols_hyperbolic(Scenario const& sc, std::optional<std::uint64_t> seed)
{
    if (!sc.hyperbolic)
        throw Error(ErrorCode::InvalidArgument, "scenario declares no symbols.hyperbolic");
    HyperbolicSymbolSpec hs = *sc.hyperbolic;
    if (seed)
        hs.samples.seed = *seed;
    PropertyReport r;
    r.name = "hyperbolic_positivity";
    PropertyReport st;
    st.name = "hyperbolic_delta_stability";
    st.tolerance = 0.9;
    try
    {
        HypBoundReport h = hp_phi_lower_bound(sc.chart, hs.params, hs.samples);
        r.statistic = h.min_hp_phi;
        r.tolerance = h.bound;
        r.pass = h.pass;
        r.details = {{"c0", h.c0},
                     {"c1_estimate", h.c1_estimate},
                     {"eps", hs.params.eps},
                     {"eps_threshold", h.eps_threshold},
                     {"support_samples", static_cast<double>(h.n_support)},
                     {"attempts", static_cast<double>(h.attempts)}};
        CommutantParams small = hs.params;
        small.delta /= 10.0;
        HypBoundReport h2 = hp_phi_lower_bound(sc.chart, small, hs.samples);
        st.statistic = h2.min_hp_phi / h.min_hp_phi;
        st.pass = st.statistic >= st.tolerance;
        st.details = {{"min_delta", h.min_hp_phi}, {"min_delta_over_10", h2.min_hp_phi}};
    }
    catch (EpsilonTooSmallError const& e)
    {
        r.pass = false;
        r.statistic = hs.params.eps;
        r.tolerance = e.threshold();
        r.details = {{"eps_threshold", e.threshold()}, {"c1_estimate", e.report().c1_estimate}};
        st.pass = false;
    }
    return {r, st};
}

inline std::vector<PropertyReport> symbols_glancing(Scenario const& sc, std::optional<std::uint64_t> seed)
{
    if (!sc.glancing)
        throw Error(ErrorCode::InvalidArgument, "scenario declares no symbols.glancing");
    GlancingSymbolSpec const& gs = *sc.glancing;
    GlancingReference ref(sc.chart, gs.params.q0, gs.span);
    GlancingSupportReport s = glancing_support_report(ref, gs.params, gs.n_samples, seed.value_or(1));
    PropertyReport sup;
    sup.name = "glancing_support";
    sup.statistic = static_cast<double>(s.violations_t + s.violations_omega + s.violations_band);
    sup.pass = s.pass();
    sup.details = {{"samples", static_cast<double>(s.samples)},
                   {"in_support", static_cast<double>(s.in_support)},
                   {"in_dchi1_support", static_cast<double>(s.in_dchi1_support)},
                   {"max_abs_dt", s.max_abs_dt},
                   {"max_omega", s.max_omega}};
    GridSpec fine = gs.grid;
    fine.n = gs.refine * (gs.grid.n - 1) + 1;
    GlancingEstimateReport a = hp_omega_glancing_estimate(ref, gs.grid);
    GlancingEstimateReport b = hp_omega_glancing_estimate(ref, fine);
    PropertyReport est;
    est.name = "glancing_estimate";
    est.tolerance = 0.15;
    est.statistic = std::abs(b.admissible_c - a.admissible_c) / a.admissible_c;
    est.finish();
    est.details = {{"c_coarse", a.admissible_c},
                   {"c_refined", b.admissible_c},
                   {"points_coarse", static_cast<double>(a.points)},
                   {"points_refined", static_cast<double>(b.points)},
                   {"on_curve_max", std::max(a.on_curve_max_lhs, b.on_curve_max_lhs)}};
    PropertyReport abl;
    abl.name = "glancing_ablation";
    abl.statistic = static_cast<double>(b.ablation_violations);
    abl.pass = b.ablation_violations > 0;
    abl.details = {{"c_without_p", b.c_without_p}};
    return {sup, est, abl};
}

//! Fixed basket of polynomial and trigonometric symbols for a (k, l) chart.
inline std::vector<std::string> bracket_basket(int k, int l)
{
    std::vector<std::string> b = {"x1^2*sigma1 + 3*sigma1^3 - x1*t", "sin(x1*sigma1) + cos(t)*tau",
                                  "exp(-x1)*sigma1^2 + x1^3*tau"};
    if (l > 0)
        b.push_back("y1*zeta1*sigma1 + sin(y1 + x1)*zeta1^2");
    if (k > 1)
        b.push_back("sigma1*sigma2*x2 + cos(x1*x2)*sigma2");
    return b;
}

inline std::vector<BCotangentPoint> bracket_grid(int k, int l, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 1.0);
    std::vector<BCotangentPoint> g;
    for (int i = 0; i < n; ++i)
    {
        BCotangentPoint q;
        q.x = Vec(k);
        q.sigma = Vec(k);
        for (int j = 0; j < k; ++j)
        {
            q.x[j] = pos(rng);
            q.sigma[j] = u(rng);
        }
        q.y = Vec(l);
        q.zeta = Vec(l);
        for (int j = 0; j < l; ++j)
        {
            q.y[j] = u(rng);
            q.zeta[j] = u(rng);
        }
        q.t = u(rng);
        q.tau = 1.0 + 0.5 * u(rng);
        g.push_back(q);
    }
    return g;
}

inline std::vector<PropertyReport> symbols_brackets(Scenario const& sc, std::optional<std::uint64_t> seed)
{
    int k = sc.chart.k(), l = sc.chart.l();
    auto names = symbol_variable_names(k, l);
    auto grid = bracket_grid(k, l, 1000, seed.value_or(1));
    PropertyReport r;
    r.name = "bracket_identity";
    r.tolerance = 1e-10;
    auto basket = bracket_basket(k, l);
    for (std::size_t i = 0; i < basket.size(); ++i)
    {
        BracketReport b = bracket_identity_report(Expression::parse(basket[i], names), k, l, grid);
        r.details.push_back({"symbol_" + std::to_string(i), b.max_discrepancy()});
        r.statistic = std::max(r.statistic, b.max_discrepancy());
    }
    r.details.push_back({"points", static_cast<double>(grid.size())});
    r.finish();
    return {r};
}

inline int cmd_symbols(Scenario const& sc, Options const& o, std::ostream& out)
{
    std::vector<PropertyReport> reps;
    auto add = [&](std::vector<PropertyReport> v) { reps.insert(reps.end(), v.begin(), v.end()); };
    bool all = o.suite == "all";
    if (!all && o.suite != "hyperbolic" && o.suite != "glancing" && o.suite != "brackets")
        throw Error(ErrorCode::InvalidArgument, "unknown suite '" + o.suite + "'");
    if (o.suite == "hyperbolic" || (all && sc.hyperbolic))
        add(symbols_hyperbolic(sc, o.seed));
    if (o.suite == "glancing" || (all && sc.glancing))
        add(symbols_glancing(sc, o.seed));
    if (o.suite == "brackets" || all)
        add(symbols_brackets(sc, o.seed));
    return emit_reports(o, "symbols.txt", reps, out);
}

//---------------------------------------------------------------------------//
//! Random characteristic point strictly inside a flat chart's box, τ = 1.
inline CotangentPoint random_interior_point(Chart const& chart, std::mt19937_64& rng)
{
    PhaseLayout L = chart.layout();
    Domain const& D = chart.domain();
    std::uniform_real_distribution<double> u(0.1, 0.9);
    std::normal_distribution<double> nd;
    CotangentPoint q;
    q.x = Vec(L.k);
    for (int j = 0; j < L.k; ++j)
        q.x[j] = D.x_max[j] * u(rng);
    q.y = Vec(L.l);
    for (int i = 0; i < L.l; ++i)
        q.y[i] = D.y_min[i] + (D.y_max[i] - D.y_min[i]) * u(rng);
    q.t = D.t_min + (D.t_max - D.t_min) * u(rng);
    Vec dir(L.k + L.l);
    do
    {
        for (int i = 0; i < dir.size(); ++i)
            dir[i] = nd(rng);
    } while (dir.norm() < 1e-3);
    dir /= dir.norm();
    q.xi = dir.head(L.k);
    q.zeta = dir.tail(L.l);
    q.tau = 1.0;
    return q;
}

inline int cmd_oracle(Scenario const& sc, Options const& o, std::ostream& out)
{
    if (!is_flat(sc.chart))
        throw Error(ErrorCode::NotFlat, "oracle comparison needs a flat chart");
    TraceConfig cfg = sc.trace;
    cfg.rule = BranchRule::specular();
    std::vector<PropertyReport> reps;
    for (std::size_t i = 0; i < sc.points.size(); ++i)
        reps.push_back(compare_to_oracle(sc.chart, sc.points[i], cfg, static_cast<int>(i)));
    std::mt19937_64 rng(o.seed.value_or(1));
    for (int i = 0; i < o.random; ++i)
        reps.push_back(compare_to_oracle(sc.chart, random_interior_point(sc.chart, rng), cfg,
                                         static_cast<int>(sc.points.size()) + i));
    return emit_reports(o, "oracle.txt", reps, out);
}

}  // namespace detail

/*!
 * Command-line entry point: trace, classify, verify, symbol-check, oracle.
 * Returns 0, 1 on bad input (with file:line:column where known), or 2 when
 * a property check fails.
 */
inline int run(int argc, char const* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    Options o;
    CLI::App app{"Broken bicharacteristic tracer for manifolds with corners"};
    app.require_subcommand(1);
    auto common = [&](CLI::App* sub, bool tracing) {
        sub->add_option("scenario", o.scenario, "scenario file (YAML)")->required();
        sub->add_option("--out", o.out_dir, "output directory");
        sub->add_option("--seed", o.seed, "random seed");
        if (tracing)
        {
            sub->add_option("--max-time", o.max_time, "flow-parameter horizon");
            sub->add_option("--branch-rule", o.branch_rule, "specular or all:N");
            sub->add_option("--tol-rel", o.tol_rel, "integrator relative tolerance");
            sub->add_option("--tol-abs", o.tol_abs, "integrator absolute tolerance");
            sub->add_option("--tol-event", o.tol_event, "event location tolerance");
            sub->add_option("--tol-char", o.tol_char, "characteristic tolerance of initial points");
            sub->add_option("--tol-max-step", o.tol_max_step, "largest integrator step");
            sub->add_option("--tol-theta", o.tol_theta, "glancing band width");
            sub->add_option("--tol-theta-g", o.tol_theta_g, "gliding/diffractive threshold");
            sub->add_option("--tol-p-drift", o.tol_p_drift, "drift warning level for p");
        }
    };
    auto* tr = app.add_subcommand("trace", "trace one initial point and write tree.txt, samples.txt, summary.json");
    common(tr, true);
    tr->add_option("--point", o.point, "index of the initial point");
    auto* cl = app.add_subcommand("classify", "tabulate elliptic/glancing/hyperbolic margins");
    common(cl, true);
    auto* ve = app.add_subcommand("verify", "run a property suite and write report.txt");
    common(ve, true);
    ve->add_option("--suite", o.suite, "core, lipschitz, limit or all");
    auto* sy = app.add_subcommand("symbol-check", "run commutant symbol checks and write symbols.txt");
    common(sy, false);
    sy->add_option("--suite", o.suite, "hyperbolic, glancing, brackets or all");
    auto* orc = app.add_subcommand("oracle", "compare traces with the flat billiard oracle");
    common(orc, true);
    orc->add_option("--random", o.random, "extra random initial points");

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        int code = app.exit(e, out, err);
        return code == 0 ? Ok : InputError;
    }
    if (sy->parsed() && o.suite == "core")
        o.suite = "all";

    Scenario sc;
    try
    {
        sc = load_scenario(o.scenario);
        detail::apply_overrides(o, sc.trace);
    }
    catch (ScenarioError const& e)
    {
        err << o.scenario << ':' << e.line() << ':' << e.column() << ": error: " << e.message() << '\n';
        return InputError;
    }
    catch (std::exception const& e)
    {
        err << o.scenario << ": error: " << e.what() << '\n';
        return InputError;
    }

    try
    {
        if (tr->parsed())
            return detail::cmd_trace(sc, o, out);
        if (cl->parsed())
            return detail::cmd_classify(sc, o, out);
        if (ve->parsed())
            return detail::cmd_verify(sc, o, out);
        if (sy->parsed())
            return detail::cmd_symbols(sc, o, out);
        return detail::cmd_oracle(sc, o, out);
    }
    catch (std::exception const& e)
    {
        err << o.scenario << ": error: " << e.what() << '\n';
        return InputError;
    }
}

}  // namespace brokenray::cli
