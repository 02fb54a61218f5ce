#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "error.hpp"
#include "geometry.hpp"

namespace brokenray {

struct IntegratorConfig
{
    double rel_tol = 1e-12;
    double abs_tol = 1e-12;
    double max_step = 0.01;
    //! location tolerance on event functions (boundary coordinates)
    double event_tol = 1e-10;
    //! flow-parameter horizon, measured from the start of the trace
    double max_time = 10.0;
    double p_drift_warn = 1e-8;
    //! rescale (ξ, ζ) after each step so that p = 0 with τ fixed
    bool rescale_fiber = false;
    long max_steps = 5'000'000;

    void validate() const
    {
        if (!(rel_tol > 0 && abs_tol > 0 && max_step > 0 && event_tol > 0 && max_time > 0 && p_drift_warn > 0))
            throw Error(ErrorCode::InvalidArgument, "integrator settings must be positive");
    }
};

//---------------------------------------------------------------------------//
/*!
 * One accepted Dormand–Prince step with its continuous extension.
 *
 * `eval(s)` is the fourth-order dense output on [s0, s0 + h] (h may be
 * negative for backward integration).
 */
struct DenseStep
{
    double s0 = 0.0;
    double h = 0.0;
    std::array<Vec, 5> rc;

    Vec eval(double s) const
    {
        double th = (s - s0) / h;
        double th1 = 1.0 - th;
        return rc[0] + th * (rc[1] + th1 * (rc[2] + th * (rc[3] + th1 * rc[4])));
    }
    double s1() const { return s0 + h; }
};

//! Sample of an integrated curve: parameter, state and its derivative.
struct Knot
{
    double s = 0.0;
    Vec z;
    Vec dz;
};

/*!
 * Terminal event: fires when `g` goes from positive to ≤ 0.
 *
 * An event whose value starts within event_tol of zero is disarmed until it
 * exceeds event_tol, and while disarmed only fires below −event_tol. This
 * lets a curve start on a wall it is leaving.
 */
struct EventFunction
{
    std::function<double(Vec const&)> g;
    int tag = 0;
};

struct IntegrationResult
{
    enum class Stop { Event, Horizon };

    std::vector<DenseStep> steps;
    std::vector<Knot> knots;
    Stop stop = Stop::Horizon;
    //! tags of armed events within event_tol of zero at the end point
    std::vector<int> fired;
    double s_end = 0.0;
    Vec z_end;
};

//---------------------------------------------------------------------------//
/*!
 * Adaptive Dormand–Prince 5(4) integrator with PI step control, dense
 * output and terminal event location.
 *
 * Events are bracketed on the dense output (eight sub-samples per step) and
 * landed by root finding on a direct step from the start of the step, so the
 * reported end point carries the full fifth-order accuracy.
 */
class DormandPrince
{
  public:
    using Field = std::function<Vec(Vec const&)>;

    DormandPrince(Field f, IntegratorConfig cfg) : f_(std::move(f)), cfg_(cfg) { cfg_.validate(); }

    /*!
     * Integrate from (s0, z0) in direction `dir` (±1) until `s0 + dir·span`
     * or the first event. `post_step` may modify the accepted state (used
     * for optional fiber rescaling).
     */
    IntegrationResult run(Vec const& z0, double s0, int dir, double span, std::vector<EventFunction> const& events,
                          std::function<void(Vec&)> const& post_step = {}) const
    {
        IntegrationResult res;
        double const s_stop = s0 + dir * span;
        Vec z = z0;
        double s = s0;
        Vec k1 = f_(z);
        check_finite(k1);
        res.knots.push_back({s, z, k1});

        std::vector<char> armed(events.size());
        for (std::size_t i = 0; i < events.size(); ++i)
            armed[i] = events[i].g(z) > cfg_.event_tol;

        double h = dir * initial_step(z, k1);
        double facold = 1e-4;
        bool last_rejected = false;
        long nsteps = 0;

        while (dir * (s_stop - s) > 0)
        {
            if (++nsteps > cfg_.max_steps)
                throw Error(ErrorCode::StepFailure, "step limit exceeded");
            bool final_step = false;
            if (dir * (s + h - s_stop) >= 0)
            {
                h = s_stop - s;
                final_step = true;
            }
            if (std::abs(h) < 1e-14 * (1.0 + std::abs(s)))
                throw Error(ErrorCode::StepFailure, "step size underflow at s = " + std::to_string(s));

            Stages st = stages(z, k1, h);
            double err = error_norm(z, st, h);
            if (!std::isfinite(err))
            {
                h *= 0.2;
                last_rejected = true;
                final_step = false;
                continue;
            }
            constexpr double beta = 0.04, expo1 = 0.2 - beta * 0.75, safe = 0.9;
            double fac11 = std::pow(err, expo1);
            if (err > 1.0)
            {
                h /= std::min(5.0, fac11 / safe);
                last_rejected = true;
                continue;
            }
            // accepted
            DenseStep ds = dense(z, st, h, s);
            Vec znew = st.y;
            if (post_step)
                post_step(znew);
            Vec knew = st.k[6];
            if (post_step)
                knew = f_(znew);

            // events
            double th_hit = 2.0;
            for (std::size_t i = 0; i < events.size(); ++i)
            {
                double th = locate(events[i], armed[i], z, k1, h, ds, znew);
                th_hit = std::min(th_hit, th);
            }
            if (th_hit <= 1.0)
            {
                Vec zh = th_hit >= 1.0 ? znew : direct_step(z, k1, th_hit * h);
                double sh = s + th_hit * h;
                // re-fit dense output to the shortened step
                Stages st2 = stages(z, k1, th_hit * h);
                res.steps.push_back(dense(z, st2, th_hit * h, s));
                Vec kh = f_(zh);
                res.knots.push_back({sh, zh, kh});
                for (std::size_t i = 0; i < events.size(); ++i)
                {
                    double gv = events[i].g(zh);
                    if (gv <= cfg_.event_tol && (armed[i] || gv < -cfg_.event_tol))
                        res.fired.push_back(events[i].tag);
                }
                // the triggering event may have been disarmed and landed on zero
                if (res.fired.empty())
                {
                    for (std::size_t i = 0; i < events.size(); ++i)
                        if (events[i].g(zh) <= cfg_.event_tol)
                            res.fired.push_back(events[i].tag);
                }
                res.stop = IntegrationResult::Stop::Event;
                res.s_end = sh;
                res.z_end = zh;
                return res;
            }

            res.steps.push_back(std::move(ds));
            res.knots.push_back({s + h, znew, knew});
            double fac = fac11 / std::pow(facold, beta);
            facold = std::max(err, 1e-4);
            s = final_step ? s_stop : s + h;
            z = std::move(znew);
            k1 = std::move(knew);

            fac = std::clamp(fac / safe, 0.1, 5.0);
            double hnew = h / fac;
            if (last_rejected)
                hnew = dir * std::min(std::abs(hnew), std::abs(h));
            last_rejected = false;
            h = dir * std::min(std::abs(hnew), cfg_.max_step);
            if (final_step)
                break;
        }
        res.stop = IntegrationResult::Stop::Horizon;
        res.s_end = s;
        res.z_end = z;
        return res;
    }

    //! Single Dormand–Prince step (fifth-order solution) of size h.
    Vec direct_step(Vec const& z, Vec const& k1, double h) const { return stages(z, k1, h).y; }

  private:
    Field f_;
    IntegratorConfig cfg_;

    struct Stages
    {
        std::array<Vec, 7> k;
        Vec y;
    };

    static void check_finite(Vec const& v)
    {
        if (!v.allFinite())
            throw Error(ErrorCode::StepFailure, "vector field not finite");
    }

    Stages stages(Vec const& z, Vec const& k1, double h) const
    {
        static constexpr double a21 = 1.0 / 5.0;
        static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
        static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
        static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                                a54 = -212.0 / 729.0;
        static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                                a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
        static constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                                a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
        Stages s;
        s.k[0] = k1;
        s.k[1] = f_(z + h * (a21 * k1));
        s.k[2] = f_(z + h * (a31 * k1 + a32 * s.k[1]));
        s.k[3] = f_(z + h * (a41 * k1 + a42 * s.k[1] + a43 * s.k[2]));
        s.k[4] = f_(z + h * (a51 * k1 + a52 * s.k[1] + a53 * s.k[2] + a54 * s.k[3]));
        s.k[5] = f_(z + h * (a61 * k1 + a62 * s.k[1] + a63 * s.k[2] + a64 * s.k[3] + a65 * s.k[4]));
        s.y = z + h * (a71 * k1 + a73 * s.k[2] + a74 * s.k[3] + a75 * s.k[4] + a76 * s.k[5]);
        s.k[6] = f_(s.y);
        return s;
    }

    double error_norm(Vec const& z, Stages const& st, double h) const
    {
        static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                                e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
        Vec e = h * (e1 * st.k[0] + e3 * st.k[2] + e4 * st.k[3] + e5 * st.k[4] + e6 * st.k[5] + e7 * st.k[6]);
        double acc = 0.0;
        for (int i = 0; i < z.size(); ++i)
        {
            double sk = cfg_.abs_tol + cfg_.rel_tol * std::max(std::abs(z[i]), std::abs(st.y[i]));
            acc += (e[i] / sk) * (e[i] / sk);
        }
        return std::sqrt(acc / static_cast<double>(z.size()));
    }

    static DenseStep dense(Vec const& z, Stages const& st, double h, double s0)
    {
        static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                                d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                                d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
        DenseStep ds;
        ds.s0 = s0;
        ds.h = h;
        Vec ydiff = st.y - z;
        Vec bspl = h * st.k[0] - ydiff;
        ds.rc[0] = z;
        ds.rc[1] = ydiff;
        ds.rc[2] = bspl;
        ds.rc[3] = ydiff - h * st.k[6] - bspl;
        ds.rc[4] = h * (d1 * st.k[0] + d3 * st.k[2] + d4 * st.k[3] + d5 * st.k[4] + d6 * st.k[5] + d7 * st.k[6]);
        return ds;
    }

    double initial_step(Vec const& z, Vec const& f0) const
    {
        auto norm = [&](Vec const& v) {
            double acc = 0.0;
            for (int i = 0; i < v.size(); ++i)
            {
                double sk = cfg_.abs_tol + cfg_.rel_tol * std::abs(z[i]);
                acc += (v[i] / sk) * (v[i] / sk);
            }
            return std::sqrt(acc / static_cast<double>(v.size()));
        };
        double d0 = norm(z), d1 = norm(f0);
        double h0 = (d0 < 1e-10 || d1 < 1e-10) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, cfg_.max_step);
        Vec f1 = f_(z + h0 * f0);
        double d2 = norm(f1 - f0) / h0;
        double dm = std::max(d1, d2);
        double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        return std::min({100.0 * h0, h1, cfg_.max_step});
    }

    /*!
     * Earliest fraction θ ∈ (0, 1] of the step at which the event fires, or
     * 2 if it does not fire. Updates the arming state.
     */
    double locate(EventFunction const& ev, char& armed, Vec const& z, Vec const& k1, double h, DenseStep const& ds,
                  Vec const& znew) const
    {
        constexpr int nsub = 8;
        double tol = cfg_.event_tol;
        double th_prev = 0.0;
        double g_prev = ev.g(z);
        for (int m = 1; m <= nsub; ++m)
        {
            double th = static_cast<double>(m) / nsub;
            double gv = ev.g(m == nsub ? znew : ds.eval(ds.s0 + th * h));
            bool fires = armed ? (gv <= 0.0) : (gv < -tol);
            if (fires)
                return refine(ev, z, k1, h, ds, th_prev, th, g_prev);
            if (gv > tol)
                armed = 1;
            th_prev = th;
            g_prev = gv;
        }
        return 2.0;
    }

    double refine(EventFunction const& ev, Vec const& z, Vec const& k1, double h, DenseStep const& ds, double lo,
                  double hi, double g_lo_dense) const
    {
        auto phi = [&](double th) { return th == 0.0 ? ev.g(z) : ev.g(direct_step(z, k1, th * h)); };
        double flo = phi(lo), fhi = phi(hi);
        if (!(flo > 0.0 && fhi <= 0.0))
        {
            // direct steps disagree with the dense bracket: widen to the step
            lo = 0.0;
            flo = phi(0.0);
            if (!(flo > 0.0 && fhi <= 0.0))
            {
                // fall back to bisection on the dense output
                auto dphi = [&](double th) { return ev.g(ds.eval(ds.s0 + th * h)); };
                double a = 0.0, b = hi;
                if (!(g_lo_dense > 0.0))
                    return lo;
                for (int it = 0; it < 200 && b - a > 1e-16; ++it)
                {
                    double m = 0.5 * (a + b);
                    if (dphi(m) > 0.0)
                        a = m;
                    else
                        b = m;
                }
                return a;
            }
        }
        if (fhi == 0.0)
            return hi;
        std::uintmax_t iters = 200;
        auto tol = [](double a, double b) { return std::abs(b - a) <= 4e-16 * std::max(1.0, std::abs(a)); };
        auto [a, b] = boost::math::tools::toms748_solve(phi, lo, hi, flo, fhi, tol, iters);
        // prefer the positive side, but never leave a point further than event_tol from the root
        double fa = phi(a);
        if (fa >= 0.0 && fa <= cfg_.event_tol)
            return a;
        double fb = phi(b);
        if (fb >= 0.0 && fb <= cfg_.event_tol)
            return b;
        return std::abs(fa) <= std::abs(fb) ? a : b;
    }
};

}  // namespace brokenray
