#pragma once

#include "cctsens/model.hpp"
#include "cctsens/smib.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace testing {

using cctsens::Constraint;
using cctsens::ConstrainedSystem;
using cctsens::Matrix;
using cctsens::PhaseDefinition;
using cctsens::Vector;

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (const double x : v) out[i++] = x;
    return out;
}

inline ConstrainedSystem smib(double Pm = 0.5, double M = 0.1, double delta_max = 1.0, double omega_max = 0.8,
                              double D = 0.5) {
    cctsens::smib::SmibParams sp;
    sp.Pm = Pm;
    sp.M = M;
    sp.D = D;
    sp.delta_max = delta_max;
    sp.omega_max = omega_max;
    return cctsens::smib::make_system(sp);
}

inline Vector smib_p(double Pm = 0.5, double M = 0.1, double delta_max = 1.0, double omega_max = 0.8) {
    return vec({Pm, M, delta_max, omega_max});
}

/// One-state system x' = a(p) x with one parameter, used for closed-form checks.
/// rate = -1 gives x' = -x; rate = p gives x' = p x.
inline ConstrainedSystem scalar_linear(bool parametric) {
    PhaseDefinition def;
    def.dynamics.f = [parametric](const Vector& x, const Vector& p) {
        return Vector::Constant(1, (parametric ? p[0] : -1.0) * x[0]);
    };
    def.dynamics.dfdx = [parametric](const Vector&, const Vector& p) {
        return Matrix::Constant(1, 1, parametric ? p[0] : -1.0);
    };
    def.dynamics.dfdp = [parametric](const Vector& x, const Vector&) {
        return Matrix::Constant(1, 1, parametric ? x[0] : 0.0);
    };
    return ConstrainedSystem(1, {"p"}, def, def, def);
}

/// Affine constraint h = c0 + g . x with gradient g and no parameter dependence.
inline Constraint affine(std::string name, double c0, Vector g) {
    Constraint c;
    c.name = std::move(name);
    const Eigen::Index n = g.size();
    c.value = [c0, g](const Vector& x, const Vector&) { return c0 + g.dot(x); };
    c.grad_x = [g](const Vector&, const Vector&) { return g; };
    c.grad_p = [](const Vector&, const Vector& p) { return Vector::Zero(p.size()); };
    c.hess_xx = [n](const Vector&, const Vector&) { return Matrix::Zero(n, n); };
    c.hess_xp = [n](const Vector&, const Vector& p) { return Matrix::Zero(n, p.size()); };
    return c;
}

/// Seeded per test case so results do not depend on test order.
struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
};

}  // namespace testing
