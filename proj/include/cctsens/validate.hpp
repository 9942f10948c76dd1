#pragma once

// Finite-difference and brute-force oracles. None of these routines touch the
// variational equations or the closed-form sensitivity formulas.

#include "cctsens/cct.hpp"
#include "cctsens/integrator.hpp"
#include "cctsens/model.hpp"
#include "cctsens/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cctsens {

struct OracleReport {
    std::string quantity;
    double analytic = 0.0;
    double oracle = 0.0;
    double rel_error = 0.0;
    std::string steps;
    double tolerance = 0.0;
    bool pass = false;
};

inline double relative_error(double analytic, double oracle) {
    return std::abs(analytic - oracle) / std::max(std::abs(oracle), 1e-12);
}

inline OracleReport make_report(std::string quantity, double analytic, double oracle, double tolerance,
                                std::string steps = {}) {
    OracleReport r;
    r.quantity = std::move(quantity);
    r.analytic = analytic;
    r.oracle = oracle;
    r.rel_error = relative_error(analytic, oracle);
    r.steps = std::move(steps);
    r.tolerance = tolerance;
    r.pass = r.rel_error <= tolerance;
    return r;
}

/// Parameter perturbation: relative to |p_k| with an absolute floor.
inline double default_fd_step(double pk, double rel = 1e-4, double floor = 1e-6) {
    return std::max(rel * std::abs(pk), floor);
}

/// Matrix-norm relative error with the same denominator floor.
inline double relative_error(const Matrix& analytic, const Matrix& oracle) {
    return (analytic - oracle).norm() / std::max(oracle.norm(), 1e-12);
}

/// Central differences of eval_f over x and p, step eps scaled per component.
inline Jacobians fd_jacobians(const ConstrainedSystem& sys, Phase phase, const Vector& x, const Vector& p,
                              double rel_eps = 1e-6) {
    sys.check_dims(x, p);
    const Eigen::Index n = x.size(), np = p.size();
    Jacobians out{Matrix(n, n), Matrix(n, np)};
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = rel_eps * std::max(1.0, std::abs(x[j]));
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        out.dfdx.col(j) = (eval_f(sys, phase, xp, p) - eval_f(sys, phase, xm, p)) / (2.0 * h);
    }
    for (Eigen::Index k = 0; k < np; ++k) {
        const double h = rel_eps * std::max(1.0, std::abs(p[k]));
        Vector pp = p, pm = p;
        pp[k] += h;
        pm[k] -= h;
        out.dfdp.col(k) = (eval_f(sys, phase, x, pp) - eval_f(sys, phase, x, pm)) / (2.0 * h);
    }
    return out;
}

/// Central difference of a re-solved equilibrium with respect to p_k.
inline Vector fd_sep_sensitivity(const ConstrainedSystem& sys, Phase phase, const Vector& p, const Vector& x_s,
                                 std::size_t k, double eps) {
    require(k < sys.np(), "parameter index out of range");
    Vector pp = p, pm = p;
    pp[static_cast<Eigen::Index>(k)] += eps;
    pm[static_cast<Eigen::Index>(k)] -= eps;
    const Vector xp = find_equilibrium(sys, phase, pp, x_s).x_s;
    const Vector xm = find_equilibrium(sys, phase, pm, x_s).x_s;
    return (xp - xm) / (2.0 * eps);
}

/// Central differences of the end state at time t over x0 components and p_k.
inline std::pair<Matrix, Vector> fd_trajectory_sensitivity(const ConstrainedSystem& sys, Phase phase,
                                                           const Vector& x0, const Vector& p, double t,
                                                           std::size_t k, double eps,
                                                           const IntegrationOptions& io = {1e-11, 1e-13}) {
    require(k < sys.np(), "parameter index out of range");
    const Eigen::Index n = x0.size();
    IntegrationOptions o = io;
    o.t_max = t;
    o.sample_stride = 1 << 20;
    const auto end = [&](const Vector& x, const Vector& pp) {
        if (t <= 0.0) return x;
        return integrate(sys, phase, x, pp, o).final_state();
    };
    Matrix dx(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Vector xp = x0, xm = x0;
        xp[j] += eps;
        xm[j] -= eps;
        dx.col(j) = (end(xp, p) - end(xm, p)) / (2.0 * eps);
    }
    Vector pp = p, pm = p;
    pp[static_cast<Eigen::Index>(k)] += eps;
    pm[static_cast<Eigen::Index>(k)] -= eps;
    const Vector dp = (end(x0, pp) - end(x0, pm)) / (2.0 * eps);
    return {dx, dp};
}

struct FdSlope {
    double slope = 0.0;
    double eps = 0.0;
    double cct_plus = 0.0;
    double cct_minus = 0.0;
    InstabilityMode mode = InstabilityMode::Mode1FaultHitsBoundary;
};

/// Central difference of the CCT itself. Both endpoints must lose stability
/// the same way; otherwise the slope is undefined there.
inline FdSlope fd_cct_slope(const ConstrainedSystem& sys, const Vector& p, std::size_t k, double eps,
                            const CctOptions& base) {
    require(k < sys.np(), "parameter index out of range");
    require(eps > 0.0, "finite-difference step must be positive");
    CctOptions o = base;
    o.bisection_tol = std::min(o.bisection_tol, std::max(eps * 1e-4, 1e-11));
    o.verify_bracket = false;
    Vector pp = p, pm = p;
    pp[static_cast<Eigen::Index>(k)] += eps;
    pm[static_cast<Eigen::Index>(k)] -= eps;
    const auto rp = compute_cct(sys, pp, o);
    const auto rm = compute_cct(sys, pm, o);
    if (rp.mode != rm.mode)
        throw Error(ErrorCode::ModeChangedAcrossStep,
                    "instability mode differs across the finite-difference step (" +
                        std::string(to_string(rm.mode)) + " vs " + std::string(to_string(rp.mode)) + ")");
    FdSlope out;
    out.eps = eps;
    out.cct_plus = rp.t_cr;
    out.cct_minus = rm.t_cr;
    out.slope = (rp.t_cr - rm.t_cr) / (2.0 * eps);
    out.mode = rp.mode;
    return out;
}

/// Analytic CCT slope against a finite-difference slope. A slope whose
/// elasticity |dtcl/dp| |p| / tcl is below `inert` is treated as zero: it
/// passes when both slopes sit inside that band, because a
/// relative error against bisection noise means nothing.
inline OracleReport slope_report(std::string quantity, double analytic, const FdSlope& fd, double tcl, double pk,
                                 double tangency, double floor, double inert = 1e-3) {
    std::string steps = "eps=" + std::to_string(fd.eps);
    OracleReport r = make_report(std::move(quantity), analytic, fd.slope, tangency, std::move(steps));
    const double zero_band = inert * std::abs(tcl) / std::max(std::abs(pk), floor);
    if (std::abs(analytic) <= zero_band && std::abs(fd.slope) <= zero_band) r.pass = true;
    return r;
}

struct ScanResult {
    double cct = 0.0;
    double first_unstable = 0.0;
    double step = 0.0;
    bool monotone = true;
    std::vector<double> violations;  // clearing times that break the stable-then-unstable pattern
};

/// Brute-force CCT: classify clearing times k*step on a uniform grid up to
/// `t_end` (the sustained-fault boundary crossing, or T_max).
inline ScanResult scan_cct(const ConstrainedSystem& sys, const Vector& p, double step, const CctOptions& o,
                           int jobs = 1, std::optional<double> t_end = std::nullopt) {
    require(step > 0.0, "scan step must be positive");
    const CctContext ctx = make_context(sys, p, o);
    double horizon = o.integration.t_max;
    if (t_end) {
        horizon = *t_end;
    } else {
        EventRequest ev;
        ev.constraints = sys.constraints(Phase::PostFault);
        for (const auto& c : sys.constraints(Phase::FaultOn)) {
            const bool dup = std::any_of(ev.constraints.begin(), ev.constraints.end(),
                                         [&](const Constraint& d) { return d.name == c.name; });
            if (!dup) ev.constraints.push_back(c);
        }
        const Trajectory tr = integrate(sys, Phase::FaultOn, ctx.x_s_pre, p, o.integration, ev);
        if (const Event* e = tr.first_event(EventKind::ConstraintCrossing)) horizon = e->t + step;
    }
    const auto count = static_cast<std::size_t>(std::floor(horizon / step)) + 1;
    const auto stable = parallel_map(count, jobs, [&](std::size_t i) {
        const double t = static_cast<double>(i + 1) * step;
        const Vector x = fault_state(sys, p, ctx.x_s_pre, t, o.integration);
        try {
            return classify_post_fault(sys, p, x, o, ctx).stable ? 1 : 0;
        } catch (const Error& e) {
            if (e.code() == ErrorCode::InconclusiveRun) return 0;
            throw;
        }
    });
    ScanResult out;
    out.step = step;
    std::optional<std::size_t> first;
    for (std::size_t i = 0; i < count; ++i)
        if (!stable[i]) {
            first = i;
            break;
        }
    if (!first) throw Error(ErrorCode::NoFiniteCct, "every scanned clearing time is stable");
    out.first_unstable = static_cast<double>(*first + 1) * step;
    out.cct = out.first_unstable - 0.5 * step;
    for (std::size_t i = *first; i < count; ++i)
        if (stable[i]) out.violations.push_back(static_cast<double>(i + 1) * step);
    out.monotone = out.violations.empty();
    return out;
}

}  // namespace cctsens
