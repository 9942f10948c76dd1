#include "support.hpp"

#include "cctsens/integrator.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace cctsens;
using testing::vec;
using Catch::Approx;

namespace {

IntegrationOptions until(double t_max, double rtol = 1e-10, double atol = 1e-12) {
    IntegrationOptions o;
    o.t_max = t_max;
    o.rel_tol = rtol;
    o.abs_tol = atol;
    return o;
}

double rel_norm(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

}  // namespace

TEST_CASE("Linear decay reaches e^-1", "[integrator]") {
    const auto sys = testing::scalar_linear(false);
    const auto tr = integrate(sys, Phase::PostFault, vec({1.0}), vec({0.0}), until(1.0));
    CHECK(tr.t_end() == Approx(1.0).margin(1e-14));
    CHECK(std::abs(tr.final_state()[0] - std::exp(-1.0)) <= 1e-8);
    REQUIRE(tr.events.size() == 1);
    CHECK(tr.events.back().kind == EventKind::HorizonReached);
}

TEST_CASE("Sustained SMIB fault has a closed-form speed", "[integrator]") {
    // With K = 0 the speed obeys M w' = Pm - D w, so w(t) = (Pm/D)(1 - e^{-Dt/M}).
    const auto sys = testing::smib();
    const Vector p = testing::smib_p();
    const auto tr = integrate(sys, Phase::FaultOn, vec({std::asin(0.5), 0.0}), p, until(0.2));
    CHECK(std::abs(tr.final_state()[1] - (1.0 - std::exp(-1.0))) <= 1e-6);
}

TEST_CASE("Run that starts on the SEP stops immediately", "[integrator]") {
    const auto sys = testing::smib();
    const Vector xs = vec({std::asin(0.5), 0.0});
    EventRequest ev;
    ev.sep = xs;
    const auto tr = integrate(sys, Phase::PostFault, xs, testing::smib_p(), until(20.0), ev);
    const Event* e = tr.first_event(EventKind::ConvergedToSep);
    REQUIRE(e != nullptr);
    CHECK(e->t == 0.0);
}

TEST_CASE("Scalar parametric flow sensitivities are exact", "[integrator]") {
    // x' = p x, x(0) = 1: x = e^{pt}, dx/dx0 = e^{pt}, dx/dp = t e^{pt}.
    const auto sys = testing::scalar_linear(true);
    const auto st = integrate_with_sensitivities(sys, Phase::PostFault, vec({1.0}), vec({-1.0}), until(1.0));
    const auto& s = st.sensitivities;
    REQUIRE(s.phi_x.size() == st.trajectory.times.size());
    CHECK(s.phi_x.front()(0, 0) == 1.0);
    CHECK(s.phi_p.front()(0, 0) == 0.0);
    CHECK(s.phi_x.back()(0, 0) == Approx(std::exp(-1.0)).epsilon(1e-8));
    CHECK(s.phi_p.back()(0, 0) == Approx(std::exp(-1.0)).epsilon(1e-8));
}

TEST_CASE("Variational sensitivities agree with finite differences", "[integrator][property]") {
    const auto sys = testing::smib();
    const double h = 1e-6;
    testing::Rng rng(11);
    for (const Phase ph : {Phase::PreFault, Phase::FaultOn, Phase::PostFault}) {
        for (int trial = 0; trial < 20; ++trial) {
            const Vector x0 = vec({rng.uniform(-1, 1), rng.uniform(-1, 1)});
            const Vector p = testing::smib_p(rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
                                             rng.uniform(0.5, 2), rng.uniform(0.5, 2));
            const double T = rng.uniform(0.1, 1.5);
            const auto o = until(T);
            const auto st = integrate_with_sensitivities(sys, ph, x0, p, o);
            const auto end = [&](const Vector& x, const Vector& q) {
                return integrate(sys, ph, x, q, o).final_state();
            };
            Matrix fx(2, 2), fp(2, 4);
            for (int j = 0; j < 2; ++j) {
                Vector a = x0, b = x0;
                a[j] += h;
                b[j] -= h;
                fx.col(j) = (end(a, p) - end(b, p)) / (2 * h);
            }
            for (int k = 0; k < 4; ++k) {
                Vector a = p, b = p;
                a[k] += h;
                b[k] -= h;
                fp.col(k) = (end(x0, a) - end(x0, b)) / (2 * h);
            }
            CHECK(rel_norm(st.sensitivities.phi_x.back(), fx) <= 1e-3);
            CHECK(rel_norm(st.sensitivities.phi_p.back(), fp) <= 1e-3);
        }
    }
}

TEST_CASE("State sensitivities compose along a trajectory", "[integrator][property]") {
    const auto sys = testing::smib();
    const Vector p = testing::smib_p(0.6, 0.2);
    const Vector x0 = vec({0.2, 0.4});
    const double t1 = 0.4, t2 = 1.1;
    const auto first = integrate_with_sensitivities(sys, Phase::PostFault, x0, p, until(t1));
    const auto second =
        integrate_with_sensitivities(sys, Phase::PostFault, first.trajectory.final_state(), p, until(t2 - t1));
    const auto whole = integrate_with_sensitivities(sys, Phase::PostFault, x0, p, until(t2));
    const Matrix chained = second.sensitivities.phi_x.back() * first.sensitivities.phi_x.back();
    CHECK((chained - whole.sensitivities.phi_x.back()).norm() <= 1e-6);
    const Matrix chained_p =
        second.sensitivities.phi_x.back() * first.sensitivities.phi_p.back() + second.sensitivities.phi_p.back();
    CHECK((chained_p - whole.sensitivities.phi_p.back()).norm() <= 1e-6);
}

TEST_CASE("Dense output", "[integrator]") {
    const auto sys = testing::smib();
    const Vector p = testing::smib_p();
    IntegrationOptions o = until(2.0, 1e-9, 1e-11);
    o.max_step = 0.05;
    const auto tr = integrate(sys, Phase::PostFault, vec({0.1, 0.6}), p, o);

    const std::size_t mid = tr.times.size() / 2;
    CHECK(state_at(tr, tr.times[mid]) == tr.states[mid]);

    const double tm = 0.5 * (tr.times[mid] + tr.times[mid + 1]);
    const auto ref = integrate(sys, Phase::PostFault, vec({0.1, 0.6}), p, until(tm, 1e-12, 1e-14));
    CHECK((state_at(tr, tm) - ref.final_state()).norm() <= 1e-6);

    try {
        state_at(tr, 2.5);
        FAIL("expected OutOfRange");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OutOfRange);
    }
    CHECK_THROWS_AS(state_at(tr, -0.1), Error);
}

TEST_CASE("Constraint crossings are located on the boundary", "[integrator]") {
    const auto sys = testing::smib();
    testing::Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector p = testing::smib_p(0.5, 0.1, rng.uniform(0.7, 1.5), rng.uniform(0.4, 1.2));
        EventRequest ev;
        ev.constraints = sys.constraints(Phase::FaultOn);
        const auto tr = integrate(sys, Phase::FaultOn, vec({std::asin(0.5), 0.0}), p, until(5.0, 1e-8, 1e-10), ev);
        const Event* e = tr.first_event(EventKind::ConstraintCrossing);
        REQUIRE(e != nullptr);
        const double hk = ev.constraints[static_cast<std::size_t>(e->constraint)].value(e->x, p);
        CHECK(std::abs(hk) <= 1e-8);
        CHECK(tr.t_end() == e->t);
    }
}

TEST_CASE("Product threshold fires at the requested level", "[integrator]") {
    const auto sys = testing::smib();
    const Vector p = testing::smib_p();
    EventRequest ev;
    ev.constraints = sys.constraints(Phase::FaultOn);
    ev.terminal_on_crossing = false;
    ev.product_threshold = 0.05;
    const auto tr = integrate(sys, Phase::FaultOn, vec({std::asin(0.5), 0.0}), p, until(5.0), ev);
    const Event* e = tr.first_event(EventKind::BoundaryApproach);
    REQUIRE(e != nullptr);
    const double H = ev.constraints[0].value(e->x, p) * ev.constraints[1].value(e->x, p);
    CHECK(H == Approx(0.05).margin(1e-8));
}

TEST_CASE("Divergence stops the run", "[integrator]") {
    const auto sys = testing::smib();
    const Vector xs = vec({std::asin(0.5), 0.0});
    EventRequest ev;
    ev.sep = xs;
    ev.divergence_radius = 4 * M_PI;
    const auto tr = integrate(sys, Phase::FaultOn, xs + vec({0.0, 0.5}), testing::smib_p(), until(20.0), ev);
    const Event* e = tr.first_event(EventKind::Diverged);
    REQUIRE(e != nullptr);
    CHECK((e->x - xs).norm() >= 4 * M_PI * (1 - 1e-9));
}

TEST_CASE("Finite-time blowup is reported", "[integrator]") {
    PhaseDefinition def;
    def.dynamics.f = [](const Vector& x, const Vector&) { return Vector::Constant(1, x[0] * x[0]); };
    def.dynamics.dfdx = [](const Vector& x, const Vector&) { return Matrix::Constant(1, 1, 2 * x[0]); };
    def.dynamics.dfdp = [](const Vector&, const Vector&) { return Matrix::Zero(1, 1); };
    const ConstrainedSystem sys(1, {"p"}, def, def, def);
    try {
        integrate(sys, Phase::PostFault, vec({1.0}), vec({0.0}), until(2.0));
        FAIL("expected a failure");
    } catch (const Error& e) {
        CHECK((e.code() == ErrorCode::NumericalBlowup || e.code() == ErrorCode::StiffnessFailure));
    }
}

TEST_CASE("Tighter tolerances do not increase the error", "[integrator][property]") {
    const auto sys = testing::smib();
    const Vector p = testing::smib_p(0.5, 0.2);
    const Vector x0 = vec({0.3, 0.9});
    const Vector ref = integrate(sys, Phase::PostFault, x0, p, until(3.0, 1e-13, 1e-15)).final_state();
    double previous = INFINITY;
    for (double tol = 1e-4; tol >= 1e-9; tol *= 0.5) {
        const double err = (integrate(sys, Phase::PostFault, x0, p, until(3.0, tol, tol * 1e-2)).final_state() - ref).norm();
        // Allow a little slack for step-sequence changes.
        CHECK(err <= 1.5 * previous + 1e-13);
        previous = std::min(previous, err);
    }
}

TEST_CASE("Sample stride thins the output but keeps the end point", "[integrator]") {
    const auto sys = testing::smib();
    IntegrationOptions o = until(2.0);
    const auto full = integrate(sys, Phase::PostFault, vec({0.1, 0.6}), testing::smib_p(), o);
    o.sample_stride = 5;
    const auto thin = integrate(sys, Phase::PostFault, vec({0.1, 0.6}), testing::smib_p(), o);
    CHECK(thin.times.size() < full.times.size());
    CHECK(thin.t_end() == full.t_end());
    CHECK((thin.final_state() - full.final_state()).norm() == 0.0);
}
