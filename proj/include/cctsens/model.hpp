#pragma once

#include "cctsens/types.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace cctsens {

enum class Phase { PreFault, FaultOn, PostFault };

inline std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::PreFault: return "pre";
        case Phase::FaultOn: return "fault";
        case Phase::PostFault: return "post";
    }
    return "?";
}

using VectorField = std::function<Vector(const Vector& x, const Vector& p)>;
using MatrixField = std::function<Matrix(const Vector& x, const Vector& p)>;
using ScalarField = std::function<double(const Vector& x, const Vector& p)>;

/// Vector field of one phase together with its analytic Jacobians.
struct PhaseDynamics {
    VectorField f;
    MatrixField dfdx;  // n x n
    MatrixField dfdp;  // n x np
};

/// Inequality constraint h(x, p) > 0. Second derivatives are optional; they
/// are only needed by the semi-saddle (post-fault boundary) sensitivity path.
struct Constraint {
    std::string name;
    ScalarField value;
    VectorField grad_x;   // length n
    VectorField grad_p;   // length np
    MatrixField hess_xx;  // n x n, may be empty
    MatrixField hess_xp;  // n x np, may be empty

    [[nodiscard]] bool has_second_derivatives() const {
        return static_cast<bool>(hess_xx) && static_cast<bool>(hess_xp);
    }
};

struct PhaseDefinition {
    PhaseDynamics dynamics;
    std::vector<Constraint> constraints;
};

/// Three-phase parametric system x' = f(x, p) subject to h(x, p) > 0.
/// Immutable after construction; all evaluation calls are const and pure.
class ConstrainedSystem {
public:
    ConstrainedSystem(std::size_t n, std::vector<std::string> param_names,
                      PhaseDefinition pre, PhaseDefinition fault, PhaseDefinition post)
        : n_(n), param_names_(std::move(param_names)),
          phases_{std::move(pre), std::move(fault), std::move(post)} {
        require(n_ >= 1, "state dimension must be at least 1");
        for (const auto& def : phases_) {
            require(def.dynamics.f && def.dynamics.dfdx && def.dynamics.dfdp,
                    "every phase needs f, df/dx and df/dp");
            std::set<std::string> seen;
            for (const auto& c : def.constraints) {
                require(c.value && c.grad_x && c.grad_p, "constraint '" + c.name + "' is incomplete");
                require(seen.insert(c.name).second,
                        "duplicate constraint identifier '" + c.name + "' within a phase");
            }
        }
    }

    [[nodiscard]] std::size_t n() const noexcept { return n_; }
    [[nodiscard]] std::size_t np() const noexcept { return param_names_.size(); }
    [[nodiscard]] const std::vector<std::string>& param_names() const noexcept { return param_names_; }

    [[nodiscard]] std::optional<std::size_t> param_index(std::string_view name) const {
        for (std::size_t i = 0; i < param_names_.size(); ++i)
            if (param_names_[i] == name) return i;
        return std::nullopt;
    }

    [[nodiscard]] const PhaseDefinition& phase(Phase ph) const {
        return phases_[static_cast<std::size_t>(ph)];
    }
    [[nodiscard]] const std::vector<Constraint>& constraints(Phase ph) const {
        return phase(ph).constraints;
    }

    void check_dims(const Vector& x, const Vector& p) const {
        if (static_cast<std::size_t>(x.size()) != n_ || static_cast<std::size_t>(p.size()) != np())
            throw Error(ErrorCode::ContractViolation,
                        "dimension mismatch: expected x in R^" + std::to_string(n_) + ", p in R^" +
                            std::to_string(np()) + ", got " + std::to_string(x.size()) + " and " +
                            std::to_string(p.size()));
    }

private:
    std::size_t n_;
    std::vector<std::string> param_names_;
    std::array<PhaseDefinition, 3> phases_;
};

inline Vector eval_f(const ConstrainedSystem& sys, Phase phase, const Vector& x, const Vector& p) {
    sys.check_dims(x, p);
    return sys.phase(phase).dynamics.f(x, p);
}

struct Jacobians {
    Matrix dfdx;
    Matrix dfdp;
};

inline Jacobians eval_jacobians(const ConstrainedSystem& sys, Phase phase, const Vector& x,
                                const Vector& p) {
    sys.check_dims(x, p);
    const auto& dyn = sys.phase(phase).dynamics;
    return {dyn.dfdx(x, p), dyn.dfdp(x, p)};
}

enum class EquilibriumClass { Stable, Unstable, NonHyperbolic };

inline std::string_view to_string(EquilibriumClass c) {
    switch (c) {
        case EquilibriumClass::Stable: return "Stable";
        case EquilibriumClass::Unstable: return "Unstable";
        case EquilibriumClass::NonHyperbolic: return "NonHyperbolic";
    }
    return "?";
}

struct EquilibriumResult {
    Vector x_s;
    double residual_norm = 0.0;
    EquilibriumClass classification = EquilibriumClass::Stable;
    Eigen::VectorXcd eigenvalues;
};

struct EquilibriumOptions {
    double residual_tol = 1e-10;
    int max_iterations = 50;
    double hyperbolicity_tol = 1e-8;
};

inline EquilibriumClass classify_jacobian(const Matrix& jac, double hyperbolicity_tol,
                                          Eigen::VectorXcd* eigenvalues = nullptr) {
    Eigen::EigenSolver<Matrix> es(jac, /*computeEigenvectors=*/false);
    const Eigen::VectorXcd ev = es.eigenvalues();
    if (eigenvalues) *eigenvalues = ev;
    bool all_negative = true;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const double re = ev[i].real();
        if (std::abs(re) < hyperbolicity_tol) return EquilibriumClass::NonHyperbolic;
        if (re > 0.0) all_negative = false;
    }
    return all_negative ? EquilibriumClass::Stable : EquilibriumClass::Unstable;
}

/// Damped Newton iteration on f(x, p) = 0. The step is halved while the
/// residual norm would increase.
inline EquilibriumResult find_equilibrium(const ConstrainedSystem& sys, Phase phase, const Vector& p,
                                          const Vector& x_guess, const EquilibriumOptions& opts = {}) {
    sys.check_dims(x_guess, p);
    const auto& dyn = sys.phase(phase).dynamics;
    Vector x = x_guess;
    Vector r = dyn.f(x, p);
    double rn = r.norm();
    for (int it = 0; it < opts.max_iterations && !(rn <= opts.residual_tol); ++it) {
        if (!std::isfinite(rn)) break;
        const Matrix jac = dyn.dfdx(x, p);
        Eigen::FullPivLU<Matrix> lu(jac);
        if (!lu.isInvertible())
            throw Error(ErrorCode::SingularJacobian,
                        "state Jacobian is singular during equilibrium search in phase " +
                            std::string(to_string(phase)));
        const Vector step = lu.solve(r);
        double lambda = 1.0;
        Vector trial = x - step;
        Vector r_trial = dyn.f(trial, p);
        for (int h = 0; h < 30 && !(r_trial.norm() < rn); ++h) {
            lambda *= 0.5;
            trial = x - lambda * step;
            r_trial = dyn.f(trial, p);
        }
        x = std::move(trial);
        r = std::move(r_trial);
        rn = r.norm();
    }
    if (!(rn <= opts.residual_tol))
        throw Error(ErrorCode::NoEquilibriumFound,
                    "Newton did not converge in phase " + std::string(to_string(phase)) +
                        " (residual " + std::to_string(rn) + ")");
    EquilibriumResult out;
    out.x_s = x;
    out.residual_norm = rn;
    out.classification = classify_jacobian(dyn.dfdx(x, p), opts.hyperbolicity_tol, &out.eigenvalues);
    return out;
}

/// Implicit-function sensitivity of an equilibrium: dx_s/dp = -(df/dx)^{-1} df/dp.
inline Matrix sep_sensitivity(const ConstrainedSystem& sys, Phase phase, const Vector& p,
                              const Vector& x_s) {
    const Jacobians jac = eval_jacobians(sys, phase, x_s, p);
    Eigen::FullPivLU<Matrix> lu(jac.dfdx);
    if (!lu.isInvertible())
        throw Error(ErrorCode::SingularJacobian,
                    "equilibrium is non-hyperbolic; df/dx is singular at x_s");
    return -lu.solve(jac.dfdp);
}

}  // namespace cctsens
