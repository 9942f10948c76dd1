#pragma once

#include "cctsens/model.hpp"

#include <cmath>

namespace cctsens::smib {

// Parameter vector layout.
inline constexpr std::size_t kPm = 0;
inline constexpr std::size_t kM = 1;
inline constexpr std::size_t kDeltaMax = 2;
inline constexpr std::size_t kOmegaMax = 3;

struct SmibParams {
    double Pm = 0.5;
    double M = 0.1;
    double D = 0.5;
    double ev_over_x_pre = 1.0;
    double ev_over_x_fault = 0.0;
    double ev_over_x_post = 1.0;
    double delta_max = 1.0;
    double omega_max = 0.8;

    [[nodiscard]] Vector parameter_vector() const {
        Vector p(4);
        p << Pm, M, delta_max, omega_max;
        return p;
    }
};

inline void validate(const SmibParams& s) {
    require(s.M > 0.0, "SMIB inertia M must be positive");
    require(s.D >= 0.0, "SMIB damping D must be non-negative");
    require(std::isfinite(s.delta_max) && std::isfinite(s.omega_max),
            "SMIB limits must be finite");
}

namespace detail {

// M x2' = Pm - k sin(x1) - D x2, with x1' = x2.
inline PhaseDynamics swing(double k, double D) {
    PhaseDynamics dyn;
    dyn.f = [k, D](const Vector& x, const Vector& p) {
        Vector out(2);
        out << x[1], (p[kPm] - k * std::sin(x[0]) - D * x[1]) / p[kM];
        return out;
    };
    dyn.dfdx = [k, D](const Vector& x, const Vector& p) {
        Matrix j(2, 2);
        j << 0.0, 1.0, -k * std::cos(x[0]) / p[kM], -D / p[kM];
        return j;
    };
    dyn.dfdp = [k, D](const Vector& x, const Vector& p) {
        const double m = p[kM];
        const double f2 = (p[kPm] - k * std::sin(x[0]) - D * x[1]) / m;
        Matrix j = Matrix::Zero(2, 4);
        j(1, kPm) = 1.0 / m;
        j(1, kM) = -f2 / m;
        return j;
    };
    return dyn;
}

// h = limit - x_i; affine, so both Hessians vanish.
inline Constraint upper_limit(std::string name, Eigen::Index state, std::size_t param) {
    Constraint c;
    c.name = std::move(name);
    c.value = [state, param](const Vector& x, const Vector& p) { return p[param] - x[state]; };
    c.grad_x = [state](const Vector&, const Vector&) {
        Vector g = Vector::Zero(2);
        g[state] = -1.0;
        return g;
    };
    c.grad_p = [param](const Vector&, const Vector&) {
        Vector g = Vector::Zero(4);
        g[static_cast<Eigen::Index>(param)] = 1.0;
        return g;
    };
    c.hess_xx = [](const Vector&, const Vector&) { return Matrix::Zero(2, 2).eval(); };
    c.hess_xp = [](const Vector&, const Vector&) { return Matrix::Zero(2, 4).eval(); };
    return c;
}

inline PhaseDefinition phase(double k, double D) {
    return {swing(k, D),
            {upper_limit("delta_max", 0, kDeltaMax), upper_limit("omega_max", 1, kOmegaMax)}};
}

}  // namespace detail

/// Single machine against an infinite bus. The fault is a bolted fault at the
/// infinite bus; clearing restores the pre-fault topology.
inline ConstrainedSystem make_system(const SmibParams& s) {
    validate(s);
    return ConstrainedSystem(2, {"Pm", "M", "delta_max", "omega_max"},
                             detail::phase(s.ev_over_x_pre, s.D),
                             detail::phase(s.ev_over_x_fault, s.D),
                             detail::phase(s.ev_over_x_post, s.D));
}

}  // namespace cctsens::smib
