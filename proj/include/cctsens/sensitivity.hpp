#pragma once

#include "cctsens/boundary.hpp"
#include "cctsens/cct.hpp"
#include "cctsens/integrator.hpp"
#include "cctsens/model.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace cctsens {

/// Fault-on quantities for one parameter component k:
///   M1 = d phi_fault / d x0,  M2 = f_fault(x_cr),  M3 = d phi_fault / d p_k,
///   M4 = d x_s_pre / d p_k,   all at (x_s_pre, t_cr, p0).
struct FaultSensitivityMatrices {
    Matrix M1;
    Vector M2;
    Vector M3;
    Vector M4;
};

/// Post-fault quantities for one parameter component k, at (x_cr, T, p0).
struct PostSensitivityMatrices {
    Matrix O1;
    Vector O2;
    Vector O3;
};

struct CctSensitivity {
    std::size_t parameter = 0;
    std::string parameter_name;
    InstabilityMode mode = InstabilityMode::Mode1FaultHitsBoundary;
    double dtcl_dp = 0.0;
    std::optional<double> dT_dp;  // mode 2 only
    double pivot = 0.0;           // |M5 M2| (mode 1) or smallest singular value (mode 2)
    double condition = 1.0;
    std::vector<std::string> warnings;
};

struct SensitivityOptions {
    IntegrationOptions integration{1e-10, 1e-12};
    double transversality_tol = 1e-8;  // relative to ||M5|| ||M2||
    double degeneracy_tol = 1e-10;     // smallest / largest singular value
    double semi_saddle_check = 1e-3;   // normalised |Hdot| allowed at x_T
    double proximity_margin = 1e-2;    // normalised H margin flagged near a mode switch
};

namespace detail {

inline void check_parameter(const ConstrainedSystem& sys, std::size_t k) {
    require(k < sys.np(), "parameter index " + std::to_string(k) + " out of range");
}

}  // namespace detail

inline FaultSensitivityMatrices fault_matrices(const ConstrainedSystem& sys, const Vector& p,
                                               const CriticalResult& critical, std::size_t k,
                                               const SensitivityOptions& o = {}) {
    detail::check_parameter(sys, k);
    const Vector& x0 = critical.context.x_s_pre;
    FaultSensitivityMatrices m;
    if (critical.t_cr > 0.0) {
        IntegrationOptions io = o.integration;
        io.t_max = critical.t_cr;
        io.sample_stride = 1 << 20;
        const auto run = integrate_with_sensitivities(sys, Phase::FaultOn, x0, p, io);
        m.M1 = run.sensitivities.phi_x.back();
        m.M3 = run.sensitivities.phi_p.back().col(static_cast<Eigen::Index>(k));
    } else {
        m.M1 = Matrix::Identity(x0.size(), x0.size());
        m.M3 = Vector::Zero(x0.size());
    }
    m.M2 = eval_f(sys, Phase::FaultOn, critical.x_cr, p);
    m.M4 = sep_sensitivity(sys, Phase::PreFault, p, x0).col(static_cast<Eigen::Index>(k));
    return m;
}

inline PostSensitivityMatrices post_matrices(const ConstrainedSystem& sys, const Vector& p,
                                             const CriticalResult& critical, std::size_t k,
                                             const SensitivityOptions& o = {}) {
    detail::check_parameter(sys, k);
    require(critical.mode != InstabilityMode::Mode1FaultHitsBoundary,
            "post-fault matrices are defined for modes 2 and 3 only");
    PostSensitivityMatrices m;
    const Eigen::Index n = critical.x_cr.size();
    if (critical.T > 0.0) {
        IntegrationOptions io = o.integration;
        io.t_max = critical.T;
        io.sample_stride = 1 << 20;
        const auto run = integrate_with_sensitivities(sys, Phase::PostFault, critical.x_cr, p, io);
        m.O1 = run.sensitivities.phi_x.back();
        m.O3 = run.sensitivities.phi_p.back().col(static_cast<Eigen::Index>(k));
    } else {
        m.O1 = Matrix::Identity(n, n);
        m.O3 = Vector::Zero(n);
    }
    m.O2 = eval_f(sys, Phase::PostFault, critical.x_T, p);
    return m;
}

namespace detail {

// Smallest normalised value reached by the post-fault constraints that are not
// active at x_cr, along the run that starts there. A small value means the
// trajectory nearly grazes another boundary portion, i.e. a mode switch is near.
inline double post_margin(const ConstrainedSystem& sys, const Vector& p, const CriticalResult& c,
                          const IntegrationOptions& io) {
    const auto& cs = sys.constraints(Phase::PostFault);
    std::vector<std::size_t> inactive;
    for (std::size_t j = 0; j < cs.size(); ++j) {
        const double ref = cs[j].value(c.context.x_s_pre, p);
        if (std::abs(cs[j].value(c.x_cr, p)) > 1e-6 * std::abs(ref)) inactive.push_back(j);
    }
    if (inactive.empty()) return std::numeric_limits<double>::infinity();
    IntegrationOptions o = io;
    o.t_max = std::min(io.t_max, 20.0);
    EventRequest ev;
    ev.sep = c.context.x_s_post;
    ev.sep_tol = 1e-3;
    const Trajectory tr = integrate(sys, Phase::PostFault, c.x_cr, p, o, ev);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : tr.states)
        for (const std::size_t j : inactive)
            best = std::min(best, cs[j].value(x, p) / cs[j].value(c.context.x_s_pre, p));
    return best;
}

}  // namespace detail

/// Sensitivity of the clearing time when the sustained fault trajectory exits
/// through the combined feasibility boundary:
///   dtcl/dp = (M6 - M5 (M1 M4 + M3)) / (M5 M2),
/// M5 = dH_comb/dx and M6 = -dH_comb/dp_k at x_cr.
inline CctSensitivity cct_sensitivity_mode1(const ConstrainedSystem& sys, const Vector& p,
                                            const CriticalResult& critical, std::size_t k,
                                            const SensitivityOptions& o = {}) {
    require(critical.mode == InstabilityMode::Mode1FaultHitsBoundary, "critical result is not mode 1");
    const auto fm = fault_matrices(sys, p, critical, k, o);
    const auto comb = combined_H(sys, critical.x_cr, p);
    const RowVector& M5 = comb.grad_x;
    const double M6 = -comb.grad_p[static_cast<Eigen::Index>(k)];
    const double denom = M5.dot(fm.M2);

    CctSensitivity out;
    out.parameter = k;
    out.parameter_name = sys.param_names()[k];
    out.mode = critical.mode;
    out.pivot = std::abs(denom);
    const double scale = M5.norm() * fm.M2.norm();
    out.condition = out.pivot > 0.0 ? scale / out.pivot : std::numeric_limits<double>::infinity();
    if (!(out.pivot > o.transversality_tol * scale))
        throw Error(ErrorCode::TangentialIntersection,
                    "fault trajectory meets the combined boundary tangentially (|M5 M2| = " +
                        std::to_string(out.pivot) + ")");
    out.dtcl_dp = (M6 - M5.dot(fm.M1 * fm.M4 + fm.M3)) / denom;

    if (std::abs(critical.H_comb_at_x_cr) > 1e-6)
        out.warnings.push_back("x_cr is not on the combined boundary (|H_comb| = " +
                               std::to_string(std::abs(critical.H_comb_at_x_cr)) + ")");
    const double margin = detail::post_margin(sys, p, critical, o.integration);
    if (margin < o.proximity_margin)
        out.warnings.push_back("post-fault run from x_cr comes within normalised H = " + std::to_string(margin) +
                               " of another boundary portion; a mode switch is nearby");
    return out;
}

/// Sensitivity of the clearing time when the critical post-fault trajectory
/// ends on a semi-saddle of the post-fault boundary. Unknowns are
/// (dtcl/dp, dT/dp) from the 2x2 system
///   O4 [O1 M2, O2] u = O5 - O4 (O3 + O1 (M1 M4 + M3)),
/// O4 = [dH/dx; dHdot/dx] and O5 = -[dH/dp_k; dHdot/dp_k] at x_T.
inline CctSensitivity cct_sensitivity_mode2(const ConstrainedSystem& sys, const Vector& p,
                                            const CriticalResult& critical, std::size_t k,
                                            const SensitivityOptions& o = {}) {
    require(critical.mode == InstabilityMode::Mode2PostHitsBoundary, "critical result is not mode 2");
    const auto fm = fault_matrices(sys, p, critical, k, o);
    const auto pm = post_matrices(sys, p, critical, k, o);
    const auto ki = static_cast<Eigen::Index>(k);

    const auto hg = eval_H_gradients(sys, Phase::PostFault, critical.x_T, p);
    const auto hdg = eval_H_dot_gradients(sys, Phase::PostFault, critical.x_T, p);
    const Eigen::Index n = critical.x_T.size();
    Matrix O4(2, n);
    O4.row(0) = hg.dx;
    O4.row(1) = hdg.dx;
    Vector O5(2);
    O5 << -hg.dp[ki], -hdg.dp[ki];

    Matrix left(n, 2);
    left.col(0) = pm.O1 * fm.M2;
    left.col(1) = pm.O2;
    const Matrix A = O4 * left;
    const Vector rhs = O5 - O4 * (pm.O3 + pm.O1 * (fm.M1 * fm.M4 + fm.M3));

    CctSensitivity out;
    out.parameter = k;
    out.parameter_name = sys.param_names()[k];
    out.mode = critical.mode;

    Eigen::JacobiSVD<Matrix> svd(A);
    const auto sv = svd.singularValues();
    out.pivot = sv[1];
    out.condition = sv[1] > 0.0 ? sv[0] / sv[1] : std::numeric_limits<double>::infinity();
    if (!(sv[1] > o.degeneracy_tol * sv[0]))
        throw Error(ErrorCode::DegenerateGeometry,
                    "2x2 semi-saddle system is singular; x_T is near an intersection of boundary portions");
    const Vector u = A.fullPivLu().solve(rhs);
    out.dtcl_dp = u[0];
    out.dT_dp = u[1];

    const auto cls = classify_pseudo_ep(sys, Phase::PostFault, critical.x_T, p);
    const Vector f = eval_f(sys, Phase::PostFault, critical.x_T, p);
    const double scale = hg.dx.norm() * f.norm();
    const double rel = scale > 0.0 ? std::abs(cls.H_dot_value) / scale : 0.0;
    if (rel > o.semi_saddle_check)
        out.warnings.push_back("x_T is only approximately a semi-saddle (normalised |Hdot| = " +
                               std::to_string(rel) + ")");
    // Mirror of the mode-1 margin: the fault trajectory nearly reaching the
    // combined boundary at t_cr means the mode-1 regime is close.
    const auto& comb = combined_constraints(sys).constraints;
    const double comb_margin =
        eval_product(comb, critical.x_cr, p).value / eval_product(comb, critical.context.x_s_pre, p).value;
    if (comb_margin < o.proximity_margin)
        out.warnings.push_back("clearing state lies within normalised H_comb = " + std::to_string(comb_margin) +
                               " of the combined boundary; a mode switch is nearby");
    return out;
}

/// Dispatches on the instability mode. Mode 3 (approach to a controlling UEP)
/// is outside this library's scope.
inline CctSensitivity cct_sensitivity(const ConstrainedSystem& sys, const Vector& p,
                                      const CriticalResult& critical, std::size_t k,
                                      const SensitivityOptions& o = {}) {
    switch (critical.mode) {
        case InstabilityMode::Mode1FaultHitsBoundary: return cct_sensitivity_mode1(sys, p, critical, k, o);
        case InstabilityMode::Mode2PostHitsBoundary: return cct_sensitivity_mode2(sys, p, critical, k, o);
        case InstabilityMode::Mode3NoReturn: break;
    }
    throw Error(ErrorCode::UnsupportedMode,
                "CCT sensitivity for loss of synchronism through a controlling UEP is not supported");
}

}  // namespace cctsens
