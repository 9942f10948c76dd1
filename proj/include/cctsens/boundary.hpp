#pragma once

#include "cctsens/integrator.hpp"
#include "cctsens/model.hpp"
#include "cctsens/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace cctsens {

/// Value and derivatives of H = prod_k h_k over an explicit constraint list.
struct ProductValue {
    double value = 1.0;
    RowVector grad_x;
    RowVector grad_p;
    Matrix hess_xx;  // filled only when requested
    Matrix hess_xp;
};

/// Product rule without division, so points with several vanishing factors
/// (corners of the feasible set) are handled exactly.
inline ProductValue eval_product(const std::vector<Constraint>& cs, const Vector& x, const Vector& p,
                                 bool second_order = false) {
    const Eigen::Index n = x.size(), np = p.size();
    const std::size_t m = cs.size();
    ProductValue out;
    out.grad_x = RowVector::Zero(n);
    out.grad_p = RowVector::Zero(np);
    std::vector<double> h(m);
    std::vector<Vector> gx(m), gp(m);
    for (std::size_t k = 0; k < m; ++k) {
        h[k] = cs[k].value(x, p);
        gx[k] = cs[k].grad_x(x, p);
        gp[k] = cs[k].grad_p(x, p);
        out.value *= h[k];
    }
    const auto prod_except = [&](std::size_t a, std::size_t b) {
        double r = 1.0;
        for (std::size_t j = 0; j < m; ++j)
            if (j != a && j != b) r *= h[j];
        return r;
    };
    for (std::size_t k = 0; k < m; ++k) {
        const double w = prod_except(k, k);
        out.grad_x += w * gx[k].transpose();
        out.grad_p += w * gp[k].transpose();
    }
    if (second_order) {
        out.hess_xx = Matrix::Zero(n, n);
        out.hess_xp = Matrix::Zero(n, np);
        for (std::size_t k = 0; k < m; ++k) {
            if (!cs[k].has_second_derivatives())
                throw Error(ErrorCode::MissingSecondDerivatives,
                            "constraint '" + cs[k].name + "' does not provide second derivatives");
            const double w = prod_except(k, k);
            out.hess_xx += w * cs[k].hess_xx(x, p);
            out.hess_xp += w * cs[k].hess_xp(x, p);
            for (std::size_t l = 0; l < m; ++l) {
                if (l == k) continue;
                const double w2 = prod_except(k, l);
                out.hess_xx += w2 * gx[k] * gx[l].transpose();
                out.hess_xp += w2 * gx[k] * gp[l].transpose();
            }
        }
    }
    return out;
}

inline double eval_H(const ConstrainedSystem& sys, Phase phase, const Vector& x, const Vector& p) {
    sys.check_dims(x, p);
    double H = 1.0;
    for (const auto& c : sys.constraints(phase)) H *= c.value(x, p);
    return H;
}

struct HGradients {
    RowVector dx;
    RowVector dp;
};

inline HGradients eval_H_gradients(const ConstrainedSystem& sys, Phase phase, const Vector& x,
                                   const Vector& p) {
    sys.check_dims(x, p);
    auto pv = eval_product(sys.constraints(phase), x, p);
    return {std::move(pv.grad_x), std::move(pv.grad_p)};
}

/// Flow derivative of H: (dH/dx) f.
inline double eval_H_dot(const ConstrainedSystem& sys, Phase phase, const Vector& x, const Vector& p) {
    return eval_H_gradients(sys, phase, x, p).dx.dot(eval_f(sys, phase, x, p));
}

/// Gradients of Hdot = (dH/dx) f:
///   d/dx = f^T d2H/dx2 + (dH/dx) df/dx,   d/dp = f^T d2H/dxdp + (dH/dx) df/dp.
inline HGradients eval_H_dot_gradients(const ConstrainedSystem& sys, Phase phase, const Vector& x,
                                       const Vector& p) {
    sys.check_dims(x, p);
    const auto pv = eval_product(sys.constraints(phase), x, p, /*second_order=*/true);
    const Vector f = eval_f(sys, phase, x, p);
    const Jacobians jac = eval_jacobians(sys, phase, x, p);
    HGradients out;
    out.dx = f.transpose() * pv.hess_xx + pv.grad_x * jac.dfdx;
    out.dp = f.transpose() * pv.hess_xp + pv.grad_x * jac.dfdp;
    return out;
}

/// H(x, p) f(x, p): the unconstrained system whose equilibria include every
/// feasibility-boundary point. Analysis only; the simulation pipeline
/// integrates the original field.
inline Vector transformed_field(const ConstrainedSystem& sys, Phase phase, const Vector& x, const Vector& p) {
    return eval_H(sys, phase, x, p) * eval_f(sys, phase, x, p);
}

enum class PseudoEpTag { StablePseudoEp, UnstablePseudoEp, SemiSaddle, NotOnBoundary };

inline std::string_view to_string(PseudoEpTag t) {
    switch (t) {
        case PseudoEpTag::StablePseudoEp: return "StablePseudoEp";
        case PseudoEpTag::UnstablePseudoEp: return "UnstablePseudoEp";
        case PseudoEpTag::SemiSaddle: return "SemiSaddle";
        case PseudoEpTag::NotOnBoundary: return "NotOnBoundary";
    }
    return "?";
}

struct PseudoEpClass {
    PseudoEpTag tag = PseudoEpTag::NotOnBoundary;
    double H_value = 0.0;
    double H_dot_value = 0.0;
    double H_dot_tol = 0.0;  // effective (scaled) semi-saddle tolerance used
};

struct PseudoEpTolerances {
    double boundary = 1e-8;
    /// Relative: |Hdot| <= semi_saddle * ||dH/dx|| * ||f||.
    double semi_saddle = 1e-6;
};

/// Sign of Hdot on the boundary: negative means f points into the infeasible
/// side (stable pseudo EP of H f), positive means it points back inside.
inline PseudoEpClass classify_pseudo_ep(const ConstrainedSystem& sys, Phase phase, const Vector& x,
                                        const Vector& p, const PseudoEpTolerances& tol = {}) {
    PseudoEpClass out;
    const auto pv = eval_product(sys.constraints(phase), x, p);
    const Vector f = eval_f(sys, phase, x, p);
    out.H_value = pv.value;
    out.H_dot_value = pv.grad_x.dot(f);
    out.H_dot_tol = tol.semi_saddle * pv.grad_x.norm() * f.norm();
    if (std::abs(out.H_value) > tol.boundary) {
        out.tag = PseudoEpTag::NotOnBoundary;
    } else if (std::abs(out.H_dot_value) <= out.H_dot_tol) {
        out.tag = PseudoEpTag::SemiSaddle;
    } else {
        out.tag = out.H_dot_value < 0.0 ? PseudoEpTag::StablePseudoEp : PseudoEpTag::UnstablePseudoEp;
    }
    return out;
}

/// Constraint list whose product defines the combined fault/post-fault
/// boundary. A constraint present in both phases (same identifier) is kept
/// once, from the post-fault side; otherwise the product would vanish to
/// second order and never change sign there.
struct CombinedConstraints {
    std::vector<Constraint> constraints;
    std::vector<std::string> excluded_from_fault;
};

inline CombinedConstraints combined_constraints(const ConstrainedSystem& sys) {
    CombinedConstraints out;
    std::set<std::string> post_names;
    for (const auto& c : sys.constraints(Phase::PostFault)) {
        post_names.insert(c.name);
        out.constraints.push_back(c);
    }
    for (const auto& c : sys.constraints(Phase::FaultOn)) {
        if (post_names.count(c.name)) out.excluded_from_fault.push_back(c.name);
        else out.constraints.push_back(c);
    }
    if (out.constraints.empty())
        throw Error(ErrorCode::EmptyCombinedBoundary, "no constraints remain for the combined boundary");
    return out;
}

struct CombinedH {
    double value = 0.0;
    RowVector grad_x;
    RowVector grad_p;
    std::vector<std::string> excluded_from_fault;
};

inline CombinedH combined_H(const ConstrainedSystem& sys, const Vector& x, const Vector& p) {
    sys.check_dims(x, p);
    auto cc = combined_constraints(sys);
    auto pv = eval_product(cc.constraints, x, p);
    return {pv.value, std::move(pv.grad_x), std::move(pv.grad_p), std::move(cc.excluded_from_fault)};
}

// ---------------------------------------------------------------------------
// Stability-region sampling on a planar grid.

enum class CellClass { Stable, HitsBoundary, DivergesOrOtherLimit };

inline std::string_view to_string(CellClass c) {
    switch (c) {
        case CellClass::Stable: return "Stable";
        case CellClass::HitsBoundary: return "HitsBoundary";
        case CellClass::DivergesOrOtherLimit: return "DivergesOrOtherLimit";
    }
    return "?";
}

enum class BoundaryAnnotation {
    UnstableFeasibilitySegment,
    StableFeasibilitySegment,
    SemiSaddlePoint,
    StableManifoldSample,
};

inline std::string_view to_string(BoundaryAnnotation a) {
    switch (a) {
        case BoundaryAnnotation::UnstableFeasibilitySegment: return "UnstableFeasibilitySegment";
        case BoundaryAnnotation::StableFeasibilitySegment: return "StableFeasibilitySegment";
        case BoundaryAnnotation::SemiSaddlePoint: return "SemiSaddlePoint";
        case BoundaryAnnotation::StableManifoldSample: return "StableManifoldSample";
    }
    return "?";
}

struct GridSpec {
    double x1_min = -1.0, x1_max = 1.0;
    int n1 = 100;
    double x2_min = -1.0, x2_max = 1.0;
    int n2 = 100;

    [[nodiscard]] double x1(int i) const { return x1_min + (i + 0.5) * (x1_max - x1_min) / n1; }
    [[nodiscard]] double x2(int j) const { return x2_min + (j + 0.5) * (x2_max - x2_min) / n2; }
};

struct SrOptions {
    IntegrationOptions integration;
    Vector sep_guess;  // defaults to the origin when empty
    double sep_tol = 1e-3;
    double divergence_radius = 50.0;
    PseudoEpTolerances pseudo_ep;
    int jobs = 1;
};

struct BoundaryPoint {
    double x1 = 0.0, x2 = 0.0;
    BoundaryAnnotation annotation = BoundaryAnnotation::StableManifoldSample;
    std::string constraint;  // empty for manifold samples
    double H_dot = 0.0;
};

struct SrGrid {
    GridSpec spec;
    Vector sep;
    std::vector<CellClass> cells;  // row-major: index = j * n1 + i
    std::vector<BoundaryPoint> boundary;

    [[nodiscard]] CellClass at(int i, int j) const { return cells[static_cast<std::size_t>(j * spec.n1 + i)]; }
};

namespace detail {

inline CellClass classify_cell(const ConstrainedSystem& sys, const Vector& p, const Vector& x0,
                               const Vector& sep, const SrOptions& o) {
    EventRequest ev;
    ev.constraints = sys.constraints(Phase::PostFault);
    ev.sep = sep;
    ev.sep_tol = o.sep_tol;
    ev.divergence_radius = o.divergence_radius;
    const Trajectory tr = integrate(sys, Phase::PostFault, x0, p, o.integration, ev);
    const Event& last = tr.events.back();
    if (last.kind == EventKind::ConvergedToSep) return CellClass::Stable;
    if (last.kind == EventKind::ConstraintCrossing) return CellClass::HitsBoundary;
    return CellClass::DivergesOrOtherLimit;
}

// Pushes x back onto h = 0 along the gradient.
inline Vector project_to(const Constraint& c, Vector x, const Vector& p) {
    for (int it = 0; it < 20; ++it) {
        const double h = c.value(x, p);
        const Vector g = c.grad_x(x, p);
        const double gg = g.squaredNorm();
        if (gg == 0.0 || std::abs(h) < 1e-14) break;
        x -= (h / gg) * g;
    }
    return x;
}

}  // namespace detail

/// Classifies every grid-cell centre by integrating the post-fault system, then
/// annotates the feasibility boundary (pseudo-EP type and semi-saddles) and the
/// interface between stable and boundary-hitting cells.
inline SrGrid sample_stability_region(const ConstrainedSystem& sys, const Vector& p, const GridSpec& spec,
                                      const SrOptions& o = {}) {
    require(sys.n() == 2, "stability-region sampling is defined for planar systems only");
    require(spec.n1 > 0 && spec.n2 > 0, "grid resolution must be positive");
    const Vector guess = o.sep_guess.size() == 2 ? o.sep_guess : Vector::Zero(2);
    const auto eq = find_equilibrium(sys, Phase::PostFault, p, guess);

    SrGrid grid;
    grid.spec = spec;
    grid.sep = eq.x_s;
    const std::size_t ncell = static_cast<std::size_t>(spec.n1) * static_cast<std::size_t>(spec.n2);
    grid.cells = parallel_map(ncell, o.jobs, [&](std::size_t idx) {
        const int i = static_cast<int>(idx % static_cast<std::size_t>(spec.n1));
        const int j = static_cast<int>(idx / static_cast<std::size_t>(spec.n1));
        Vector x0(2);
        x0 << spec.x1(i), spec.x2(j);
        return detail::classify_cell(sys, p, x0, eq.x_s, o);
    });

    const auto& cs = sys.constraints(Phase::PostFault);
    const auto point = [&](int i, int j) {
        Vector x(2);
        x << spec.x1(i), spec.x2(j);
        return x;
    };
    const auto feasible_except = [&](const Vector& x, std::size_t k) {
        for (std::size_t m = 0; m < cs.size(); ++m)
            if (m != k && cs[m].value(x, p) <= 0.0) return false;
        return true;
    };

    // Feasibility-boundary samples on grid edges, per constraint.
    for (std::size_t k = 0; k < cs.size(); ++k) {
        std::vector<std::pair<Vector, double>> samples;  // (point, Hdot)
        const auto add_edge = [&](const Vector& a, const Vector& b) {
            const double ha = cs[k].value(a, p), hb = cs[k].value(b, p);
            if ((ha > 0.0) == (hb > 0.0)) return;
            Vector lo = a, hi = b;
            for (int it = 0; it < 60; ++it) {
                const Vector mid = 0.5 * (lo + hi);
                if ((cs[k].value(mid, p) > 0.0) == (ha > 0.0)) lo = mid;
                else hi = mid;
            }
            const Vector xb = detail::project_to(cs[k], 0.5 * (lo + hi), p);
            if (!feasible_except(xb, k)) return;
            const auto cls = classify_pseudo_ep(sys, Phase::PostFault, xb, p, o.pseudo_ep);
            BoundaryPoint bp;
            bp.x1 = xb[0], bp.x2 = xb[1];
            bp.constraint = cs[k].name;
            bp.H_dot = cls.H_dot_value;
            if (cls.tag == PseudoEpTag::UnstablePseudoEp) bp.annotation = BoundaryAnnotation::UnstableFeasibilitySegment;
            else if (cls.tag == PseudoEpTag::StablePseudoEp) bp.annotation = BoundaryAnnotation::StableFeasibilitySegment;
            else bp.annotation = BoundaryAnnotation::SemiSaddlePoint;
            grid.boundary.push_back(bp);
            samples.emplace_back(xb, cls.H_dot_value);
        };
        for (int j = 0; j < spec.n2; ++j)
            for (int i = 0; i + 1 < spec.n1; ++i) add_edge(point(i, j), point(i + 1, j));
        for (int i = 0; i < spec.n1; ++i)
            for (int j = 0; j + 1 < spec.n2; ++j) add_edge(point(i, j), point(i, j + 1));

        // Semi-saddles: Hdot changes sign between neighbouring boundary samples.
        const double spacing = std::hypot((spec.x1_max - spec.x1_min) / spec.n1, (spec.x2_max - spec.x2_min) / spec.n2);
        for (std::size_t a = 0; a < samples.size(); ++a) {
            for (std::size_t b = a + 1; b < samples.size(); ++b) {
                if ((samples[a].first - samples[b].first).norm() > 1.5 * spacing) continue;
                if ((samples[a].second > 0.0) == (samples[b].second > 0.0)) continue;
                Vector lo = samples[a].first, hi = samples[b].first;
                const bool lo_pos = samples[a].second > 0.0;
                for (int it = 0; it < 60; ++it) {
                    const Vector mid = detail::project_to(cs[k], 0.5 * (lo + hi), p);
                    if ((eval_H_dot(sys, Phase::PostFault, mid, p) > 0.0) == lo_pos) lo = mid;
                    else hi = mid;
                }
                const Vector xs = detail::project_to(cs[k], 0.5 * (lo + hi), p);
                BoundaryPoint bp;
                bp.x1 = xs[0], bp.x2 = xs[1];
                bp.constraint = cs[k].name;
                bp.annotation = BoundaryAnnotation::SemiSaddlePoint;
                bp.H_dot = eval_H_dot(sys, Phase::PostFault, xs, p);
                grid.boundary.push_back(bp);
            }
        }
    }

    // Interface between stable and boundary-hitting feasible cells.
    const auto interior = [&](const Vector& x) {
        for (const auto& c : cs)
            if (c.value(x, p) <= 0.0) return false;
        return true;
    };
    const auto interface = [&](int i0, int j0, int i1, int j1) {
        const CellClass a = grid.at(i0, j0), b = grid.at(i1, j1);
        const bool pair = (a == CellClass::Stable && b == CellClass::HitsBoundary) ||
                          (a == CellClass::HitsBoundary && b == CellClass::Stable);
        if (!pair) return;
        const Vector xa = point(i0, j0), xb = point(i1, j1);
        if (!interior(xa) || !interior(xb)) return;
        BoundaryPoint bp;
        bp.x1 = 0.5 * (xa[0] + xb[0]);
        bp.x2 = 0.5 * (xa[1] + xb[1]);
        bp.annotation = BoundaryAnnotation::StableManifoldSample;
        grid.boundary.push_back(bp);
    };
    for (int j = 0; j < spec.n2; ++j)
        for (int i = 0; i + 1 < spec.n1; ++i) interface(i, j, i + 1, j);
    for (int i = 0; i < spec.n1; ++i)
        for (int j = 0; j + 1 < spec.n2; ++j) interface(i, j, i, j + 1);
    return grid;
}

}  // namespace cctsens
