#pragma once

#include "cctsens/boundary.hpp"
#include "cctsens/integrator.hpp"
#include "cctsens/model.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cctsens {

enum class InstabilityMode { Mode1FaultHitsBoundary, Mode2PostHitsBoundary, Mode3NoReturn };

inline std::string_view to_string(InstabilityMode m) {
    switch (m) {
        case InstabilityMode::Mode1FaultHitsBoundary: return "Mode1FaultHitsBoundary";
        case InstabilityMode::Mode2PostHitsBoundary: return "Mode2PostHitsBoundary";
        case InstabilityMode::Mode3NoReturn: return "Mode3NoReturn";
    }
    return "?";
}

inline int mode_number(InstabilityMode m) { return static_cast<int>(m) + 1; }

struct CctOptions {
    IntegrationOptions integration;  // integration.t_max is the post-fault horizon T_max
    double bisection_tol = 0.01;
    /// Post-fault run counts as hitting the boundary once H_post / H_post(x_s_pre) <= this.
    double boundary_touch_tol = 1e-5;
    /// Limit-point test for loss of synchronism: local minimum of ||f_post|| below this.
    double field_min_tol = 1e-3;
    double sep_tol = 1e-3;
    double divergence_radius = 4.0 * M_PI;
    double boundary_tol = 1e-6;  // |H_comb(x_cr)| bound for a mode-1 result
    int max_iterations = 100;
    bool verify_bracket = true;
    Vector sep_guess;  // initial guess for the pre-fault SEP; origin when empty
};

/// Equilibria and scales shared by every clearing-time probe of one configuration.
struct CctContext {
    Vector x_s_pre;
    Vector x_s_post;
    double H_scale = 1.0;  // |H_post(x_s_pre)|
};

inline CctContext make_context(const ConstrainedSystem& sys, const Vector& p, const CctOptions& o) {
    const Vector guess = o.sep_guess.size() == static_cast<Eigen::Index>(sys.n()) ? o.sep_guess
                                                                                 : Vector::Zero(static_cast<Eigen::Index>(sys.n()));
    CctContext ctx;
    const auto pre = find_equilibrium(sys, Phase::PreFault, p, guess);
    if (pre.classification != EquilibriumClass::Stable)
        throw Error(ErrorCode::NoEquilibriumFound, "pre-fault equilibrium near the guess is not a stable equilibrium");
    ctx.x_s_pre = pre.x_s;
    ctx.x_s_post = find_equilibrium(sys, Phase::PostFault, p, pre.x_s).x_s;
    const double Hs = eval_H(sys, Phase::PostFault, ctx.x_s_pre, p);
    if (!(Hs > 0.0))
        throw Error(ErrorCode::NoFiniteCct, "pre-fault equilibrium violates the post-fault constraints");
    ctx.H_scale = Hs;
    return ctx;
}

struct PostFaultOutcome {
    bool stable = false;
    std::optional<double> t1;  // boundary crossing or approach
    std::optional<double> t2;  // ||f|| local minimum below field_min_tol
    std::optional<double> T;
    std::optional<Vector> x_T;
    double H_raw_at_T = std::numeric_limits<double>::quiet_NaN();
    double H_normalized_at_T = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    Trajectory trajectory;
};

/// Integrates the post-fault system from x_cl with boundary, field-norm and
/// convergence detectors armed.
inline PostFaultOutcome classify_post_fault(const ConstrainedSystem& sys, const Vector& p, const Vector& x_cl,
                                            const CctOptions& o, const CctContext& ctx) {
    require(x_cl.allFinite(), "clearing state must be finite");
    EventRequest ev;
    ev.constraints = sys.constraints(Phase::PostFault);
    ev.terminal_on_crossing = true;
    ev.product_threshold = o.boundary_touch_tol * ctx.H_scale;
    ev.terminal_on_approach = true;
    ev.detect_field_min = true;
    ev.field_min_threshold = o.field_min_tol;
    ev.terminal_on_field_min = false;
    ev.sep = ctx.x_s_post;
    ev.sep_tol = o.sep_tol;
    ev.divergence_radius = o.divergence_radius;

    PostFaultOutcome out;
    out.trajectory = integrate(sys, Phase::PostFault, x_cl, p, o.integration, ev);
    const Trajectory& tr = out.trajectory;
    const Event& last = tr.events.back();

    if (last.kind == EventKind::ConvergedToSep) {
        out.stable = true;
        return out;
    }
    if (last.kind == EventKind::ConstraintCrossing || last.kind == EventKind::BoundaryApproach) out.t1 = last.t;
    if (const Event* fm = tr.first_event(EventKind::FieldNormLocalMin)) out.t2 = fm->t;
    out.diverged = last.kind == EventKind::Diverged;

    if (!out.t1 && !out.t2 && !out.diverged)
        throw Error(ErrorCode::InconclusiveRun,
                    "post-fault run neither converged nor hit a limit by T_max = " +
                        std::to_string(o.integration.t_max) + " (distance to SEP " +
                        std::to_string((tr.final_state() - ctx.x_s_post).norm()) + ")");

    // T = min(t1, t2); a tie goes to the boundary event.
    if (out.t1 && (!out.t2 || *out.t1 <= *out.t2)) {
        out.T = out.t1;
        out.x_T = last.x;
    } else if (out.t2) {
        out.T = out.t2;
        out.x_T = tr.first_event(EventKind::FieldNormLocalMin)->x;
    }
    if (out.x_T) {
        out.H_raw_at_T = eval_H(sys, Phase::PostFault, *out.x_T, p);
        out.H_normalized_at_T = out.H_raw_at_T / ctx.H_scale;
    }
    return out;
}

inline PostFaultOutcome classify_post_fault(const ConstrainedSystem& sys, const Vector& p, const Vector& x_cl,
                                            const CctOptions& o) {
    return classify_post_fault(sys, p, x_cl, o, make_context(sys, p, o));
}

/// phi_fault(x0, t, p), integrated afresh to land exactly on t.
inline Vector fault_state(const ConstrainedSystem& sys, const Vector& p, const Vector& x0, double t,
                          const IntegrationOptions& io) {
    if (t <= 0.0) return x0;
    IntegrationOptions o = io;
    o.t_max = t;
    o.sample_stride = 1 << 20;
    return integrate(sys, Phase::FaultOn, x0, p, o).final_state();
}

struct BracketStep {
    double t_stable;
    double t_unstable;
    double t_cl;
    bool stable;
};

struct CriticalResult {
    double t_stable = 0.0;
    double t_unstable = 0.0;
    double t_cr = 0.0;
    Vector x_cr;
    InstabilityMode mode = InstabilityMode::Mode3NoReturn;
    double T = 0.0;
    Vector x_T;
    std::optional<double> t1, t2;
    double H_raw_at_T = 0.0;
    double H_normalized_at_T = 0.0;
    double H_comb_at_x_cr = 0.0;
    std::optional<double> sustained_hit_time;
    CctContext context;
    Trajectory fault_trajectory;         // from x_s_pre to t_cr
    Trajectory critical_post_trajectory;  // unstable-side run that produced (T, x_T)
    std::vector<BracketStep> history;
    int iterations = 0;
};

/// Bisection on the clearing time. The unstable end starts at the first
/// crossing of the combined boundary by the sustained fault trajectory (or is
/// found by doubling when the sustained fault stays feasible) and the search
/// continues until the bracket is narrower than the tolerance and the latest
/// unstable probe has produced a limit point (T, x_T).
inline CriticalResult compute_cct(const ConstrainedSystem& sys, const Vector& p, const CctOptions& o = {}) {
    require(o.bisection_tol > 0.0, "bisection tolerance must be positive");
    CriticalResult res;
    res.context = make_context(sys, p, o);
    const CctContext& ctx = res.context;
    const auto combined = combined_constraints(sys);

    const auto probe = [&](double t_cl) {
        return classify_post_fault(sys, p, fault_state(sys, p, ctx.x_s_pre, t_cl, o.integration), o, ctx);
    };

    // Sustained fault.
    EventRequest sustained_ev;
    sustained_ev.constraints = combined.constraints;
    const Trajectory sustained = integrate(sys, Phase::FaultOn, ctx.x_s_pre, p, o.integration, sustained_ev);
    const Event* hit = sustained.first_event(EventKind::ConstraintCrossing);

    double t_s = 0.0, t_u = 0.0;
    std::optional<PostFaultOutcome> unstable_run;

    if (!probe(0.0).stable)
        throw Error(ErrorCode::NoFiniteCct, "clearing at t = 0 is already unstable");

    if (hit) {
        res.sustained_hit_time = hit->t;
        t_u = hit->t;
        unstable_run = probe(t_u);
        if (unstable_run->stable)
            throw Error(ErrorCode::BracketCollapse, "clearing on the combined boundary classified stable");
    } else {
        double t = std::max(0.1, 10.0 * o.bisection_tol);
        for (; t <= o.integration.t_max; t *= 2.0) {
            auto run = probe(t);
            if (!run.stable) {
                t_u = t;
                unstable_run = std::move(run);
                break;
            }
            t_s = t;
        }
        if (!unstable_run)
            throw Error(ErrorCode::NoFiniteCct, "every clearing time up to T_max is stable");
    }

    for (res.iterations = 0; res.iterations < o.max_iterations; ++res.iterations) {
        if (t_u - t_s < o.bisection_tol && unstable_run->T) break;
        const double t_cl = 0.5 * (t_s + t_u);
        auto run = probe(t_cl);
        res.history.push_back({t_s, t_u, t_cl, run.stable});
        if (run.stable) {
            t_s = t_cl;
        } else {
            t_u = t_cl;
            unstable_run = std::move(run);
        }
    }
    if (!unstable_run->T)
        throw Error(ErrorCode::InconclusiveRun, "no limit point captured on the unstable side after " +
                                                    std::to_string(o.max_iterations) + " bisection steps");
    if (t_u - t_s >= o.bisection_tol)
        throw Error(ErrorCode::InconclusiveRun, "bisection iteration cap reached before the tolerance");

    if (o.verify_bracket) {
        const bool s_ok = probe(t_s).stable;
        const bool u_ok = !probe(t_u).stable;
        if (!s_ok || !u_ok)
            throw Error(ErrorCode::BracketCollapse, "re-verification of the final bracket is inconsistent");
    }

    res.t_stable = t_s;
    res.t_unstable = t_u;
    res.T = *unstable_run->T;
    res.x_T = *unstable_run->x_T;
    res.t1 = unstable_run->t1;
    res.t2 = unstable_run->t2;
    res.H_raw_at_T = unstable_run->H_raw_at_T;
    res.H_normalized_at_T = unstable_run->H_normalized_at_T;
    res.critical_post_trajectory = std::move(unstable_run->trajectory);

    // Unstable immediately on clearing: the fault trajectory itself reached the
    // boundary. Report the exact crossing as the critical point.
    const bool immediate = res.t1 && *res.t1 == 0.0 && res.T == 0.0;
    if (immediate && hit) {
        res.mode = InstabilityMode::Mode1FaultHitsBoundary;
        res.t_cr = hit->t;
        res.x_cr = hit->x;
    } else {
        res.t_cr = 0.5 * (t_s + t_u);
        res.x_cr = fault_state(sys, p, ctx.x_s_pre, res.t_cr, o.integration);
        if (immediate)
            res.mode = InstabilityMode::Mode1FaultHitsBoundary;
        else if (res.t1 && res.T == *res.t1)
            res.mode = InstabilityMode::Mode2PostHitsBoundary;
        else
            res.mode = InstabilityMode::Mode3NoReturn;
    }
    res.H_comb_at_x_cr = eval_product(combined.constraints, res.x_cr, p).value;

    IntegrationOptions fo = o.integration;
    fo.t_max = std::max(res.t_cr, 1e-12);
    res.fault_trajectory = integrate(sys, Phase::FaultOn, ctx.x_s_pre, p, fo);
    return res;
}

}  // namespace cctsens
