#pragma once

#include "cctsens/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cctsens {

struct IntegrationOptions {
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    double max_step = 0.1;
    double t_max = 20.0;
    double event_refine_tol = 1e-10;
    double min_step = 1e-13;
    /// Keep every k-th accepted step in the output; events and the final
    /// point are always kept.
    int sample_stride = 1;
    long max_steps = 2'000'000;
};

enum class EventKind {
    ConstraintCrossing,  // some h_k crossed zero
    BoundaryApproach,    // product H fell below the requested threshold
    FieldNormLocalMin,   // local minimum of ||f|| below the requested threshold
    ConvergedToSep,
    Diverged,            // left the requested radius around the reference point
    HorizonReached,
};

inline std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::ConstraintCrossing: return "ConstraintCrossing";
        case EventKind::BoundaryApproach: return "BoundaryApproach";
        case EventKind::FieldNormLocalMin: return "FieldNormLocalMin";
        case EventKind::ConvergedToSep: return "ConvergedToSep";
        case EventKind::Diverged: return "Diverged";
        case EventKind::HorizonReached: return "HorizonReached";
    }
    return "?";
}

struct Event {
    double t = 0.0;
    EventKind kind = EventKind::HorizonReached;
    int constraint = -1;  // index into EventRequest::constraints, -1 for the product
    std::string constraint_name;
    Vector x;
    double value = 0.0;  // h_k, H or ||f|| at the event state, depending on kind
};

/// Which detectors are armed for one run.
struct EventRequest {
    std::vector<Constraint> constraints;
    bool terminal_on_crossing = true;

    /// Fires when prod h_k drops to this value (without necessarily crossing).
    std::optional<double> product_threshold;
    bool terminal_on_approach = true;

    bool detect_field_min = false;
    double field_min_threshold = std::numeric_limits<double>::infinity();
    bool terminal_on_field_min = false;

    std::optional<Vector> sep;
    double sep_tol = 1e-3;
    double divergence_radius = std::numeric_limits<double>::infinity();
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> derivatives;
    std::vector<Event> events;

    [[nodiscard]] bool empty() const { return times.empty(); }
    [[nodiscard]] double t_end() const { return times.back(); }
    [[nodiscard]] const Vector& final_state() const { return states.back(); }

    [[nodiscard]] const Event* first_event(EventKind kind) const {
        for (const auto& e : events)
            if (e.kind == kind) return &e;
        return nullptr;
    }
};

/// Phi_x = d phi / d x0 and Phi_p = d phi / d p at every stored sample, plus
/// the values at each event (aligned with Trajectory::events).
struct SensitivityBundle {
    std::vector<Matrix> phi_x;
    std::vector<Matrix> phi_p;
    std::vector<Matrix> event_phi_x;
    std::vector<Matrix> event_phi_p;
};

namespace detail {

using Rhs = std::function<void(const Vector& y, Vector& dy)>;

// Dormand-Prince 5(4) tableau.
struct DopriTableau {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    // b - b_hat
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

class Dopri5 {
public:
    explicit Dopri5(Rhs rhs) : rhs_(std::move(rhs)) {}

    /// One step of size h from (y, k1 = f(y)). Writes the 5th-order solution,
    /// its derivative (FSAL) and the embedded error vector.
    void step(const Vector& y, const Vector& k1, double h, Vector& y_out, Vector& k7, Vector* err) {
        using T = DopriTableau;
        const Eigen::Index n = y.size();
        k2_.resize(n), k3_.resize(n), k4_.resize(n), k5_.resize(n), k6_.resize(n), tmp_.resize(n);
        tmp_ = y + h * (T::a21 * k1);
        rhs_(tmp_, k2_);
        tmp_ = y + h * (T::a31 * k1 + T::a32 * k2_);
        rhs_(tmp_, k3_);
        tmp_ = y + h * (T::a41 * k1 + T::a42 * k2_ + T::a43 * k3_);
        rhs_(tmp_, k4_);
        tmp_ = y + h * (T::a51 * k1 + T::a52 * k2_ + T::a53 * k3_ + T::a54 * k4_);
        rhs_(tmp_, k5_);
        tmp_ = y + h * (T::a61 * k1 + T::a62 * k2_ + T::a63 * k3_ + T::a64 * k4_ + T::a65 * k5_);
        rhs_(tmp_, k6_);
        y_out = y + h * (T::b1 * k1 + T::b3 * k3_ + T::b4 * k4_ + T::b5 * k5_ + T::b6 * k6_);
        k7.resize(n);
        rhs_(y_out, k7);
        if (err)
            *err = h * (T::e1 * k1 + T::e3 * k3_ + T::e4 * k4_ + T::e5 * k5_ + T::e6 * k6_ + T::e7 * k7);
    }

    void eval(const Vector& y, Vector& dy) { rhs_(y, dy); }

private:
    Rhs rhs_;
    Vector k2_, k3_, k4_, k5_, k6_, tmp_;
};

inline double error_norm(const Vector& err, const Vector& y0, const Vector& y1, double atol, double rtol) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        const double r = err[i] / sc;
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(err.size()));
}

inline double initial_step(Dopri5& rk, const Vector& y0, const Vector& f0, const IntegrationOptions& o) {
    // Hairer-Norsett-Wanner starting step heuristic.
    Vector sc = (o.abs_tol + o.rel_tol * y0.array().abs()).matrix();
    const double d0 = (y0.array() / sc.array()).matrix().norm() / std::sqrt(double(y0.size()));
    const double d1 = (f0.array() / sc.array()).matrix().norm() / std::sqrt(double(y0.size()));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, o.max_step);
    Vector y1 = y0 + h0 * f0, f1(y0.size());
    rk.eval(y1, f1);
    const double d2 = ((f1 - f0).array() / sc.array()).matrix().norm() / std::sqrt(double(y0.size())) / h0;
    const double dm = std::max(d1, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, o.max_step, o.t_max});
}

struct RawRun {
    Trajectory traj;
    std::vector<Vector> aug;        // full augmented state per sample
    std::vector<Vector> event_aug;  // full augmented state per event
};

/// Adaptive driver shared by plain and sensitivity runs. `n` is the size of
/// the physical state (leading block of the augmented vector); `field` maps
/// a physical state to f(x) for detectors.
inline RawRun drive(Rhs rhs, Eigen::Index n, const Vector& y0, const IntegrationOptions& o,
                    const EventRequest& ev, const std::function<Vector(const Vector&)>& field,
                    const Vector& p) {
    require(o.rel_tol > 0.0 && o.abs_tol > 0.0 && o.t_max > 0.0, "integration tolerances and horizon must be positive");
    require(y0.allFinite(), "initial condition must be finite");

    Dopri5 rk(std::move(rhs));
    RawRun out;
    auto& tr = out.traj;

    const auto phys = [n](const Vector& y) { return Vector(y.head(n)); };
    const auto product = [&](const Vector& x) {
        double H = 1.0;
        for (const auto& c : ev.constraints) H *= c.value(x, p);
        return H;
    };

    const auto product_rate = [&](const Vector& x, const Vector& fx) {
        double r = 0.0;
        for (std::size_t k = 0; k < ev.constraints.size(); ++k) {
            double w = 1.0;
            for (std::size_t j = 0; j < ev.constraints.size(); ++j)
                if (j != k) w *= ev.constraints[j].value(x, p);
            r += w * ev.constraints[k].grad_x(x, p).dot(fx);
        }
        return r;
    };

    Vector y = y0, k1(y0.size());
    rk.eval(y, k1);
    double t = 0.0;

    const auto push_sample = [&](double ts, const Vector& ys, const Vector& ks) {
        tr.times.push_back(ts);
        tr.states.push_back(phys(ys));
        tr.derivatives.push_back(ks.head(n));
        out.aug.push_back(ys);
    };
    const auto push_event = [&](double te, EventKind kind, const Vector& ye, int idx, double value) {
        Event e;
        e.t = te;
        e.kind = kind;
        e.constraint = idx;
        if (idx >= 0) e.constraint_name = ev.constraints[static_cast<std::size_t>(idx)].name;
        e.x = phys(ye);
        e.value = value;
        tr.events.push_back(std::move(e));
        out.event_aug.push_back(ye);
    };
    const auto finish_at = [&](double te, const Vector& ye) {
        if (tr.times.empty() || te > tr.times.back()) {
            Vector k(ye.size());
            rk.eval(ye, k);
            push_sample(te, ye, k);
        }
    };

    push_sample(t, y, k1);

    // Conditions already present at the initial point.
    {
        const Vector x = phys(y);
        for (std::size_t k = 0; k < ev.constraints.size(); ++k) {
            const double hk = ev.constraints[k].value(x, p);
            if (hk <= 0.0) {
                push_event(t, EventKind::ConstraintCrossing, y, static_cast<int>(k), hk);
                if (ev.terminal_on_crossing) return out;
            }
        }
        if (ev.product_threshold && !ev.constraints.empty() && product(x) <= *ev.product_threshold) {
            push_event(t, EventKind::BoundaryApproach, y, -1, product(x));
            if (ev.terminal_on_approach) return out;
        }
        if (ev.sep && (x - *ev.sep).norm() <= ev.sep_tol) {
            push_event(t, EventKind::ConvergedToSep, y, -1, field(x).norm());
            return out;
        }
    }

    double h = initial_step(rk, y, k1, o);
    Vector y_new(y.size()), k_new(y.size()), err(y.size());
    Vector y_prev = y, k_prev = k1;  // state one accepted step back
    double t_prev = t;
    double fn_prev2 = std::numeric_limits<double>::quiet_NaN();
    double fn_prev = field(phys(y)).norm();
    long steps = 0;
    int since_sample = 0;

    // State at t_base + tau via a single step from a stored accepted point.
    const auto state_from = [&](const Vector& yb, const Vector& kb, double tau) {
        if (tau <= 0.0) return yb;
        Vector ys(yb.size()), ks(yb.size());
        rk.step(yb, kb, tau, ys, ks, nullptr);
        return ys;
    };

    // Bisection on g over (0, h]: returns tau of the first point with g <= 0.
    const auto refine_root = [&](const Vector& yb, const Vector& kb, double hstep,
                                 const std::function<double(const Vector&)>& g) {
        double lo = 0.0, hi = hstep;
        for (int it = 0; it < 60 && hi - lo > o.event_refine_tol; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (g(phys(state_from(yb, kb, mid))) <= 0.0) hi = mid;
            else lo = mid;
        }
        return hi;
    };

    while (t < o.t_max) {
        if (++steps > o.max_steps)
            throw Error(ErrorCode::StiffnessFailure, "maximum number of steps exceeded at t = " + std::to_string(t));
        h = std::min(h, o.t_max - t);
        rk.step(y, k1, h, y_new, k_new, &err);
        const double en = error_norm(err, y, y_new, o.abs_tol, o.rel_tol);
        if (!std::isfinite(en) || !y_new.allFinite()) {
            h *= 0.2;
            if (h < o.min_step)
                throw Error(ErrorCode::NumericalBlowup, "non-finite state near t = " + std::to_string(t));
            continue;
        }
        if (en > 1.0) {
            h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
            if (h < o.min_step)
                throw Error(ErrorCode::StiffnessFailure, "step size underflow at t = " + std::to_string(t));
            continue;
        }

        // Accepted step [t, t + h].
        const double t_new = t + h;
        const Vector x0 = phys(y), x1 = phys(y_new);

        // Crossings inside the step, including a dip below zero and back that
        // leaves both endpoints positive (detected from the rate g' = grad g . f).
        std::vector<std::pair<double, int>> crossings;
        const Vector f0 = field(x0), f1 = field(x1);
        const auto detect = [&](const std::function<double(const Vector&)>& g,
                                const std::function<double(const Vector&, const Vector&)>& rate) -> std::optional<double> {
            const double g0 = g(x0), g1 = g(x1);
            if (!(g0 > 0.0)) return std::nullopt;
            if (g1 <= 0.0) return refine_root(y, k1, h, g);
            if (!(rate(x0, f0) < 0.0 && rate(x1, f1) > 0.0)) return std::nullopt;
            double lo = 0.0, hi = h;
            for (int it = 0; it < 60 && hi - lo > o.event_refine_tol; ++it) {
                const double mid = 0.5 * (lo + hi);
                const Vector xm = phys(state_from(y, k1, mid));
                if (rate(xm, field(xm)) < 0.0) lo = mid;
                else hi = mid;
            }
            const double tmin = 0.5 * (lo + hi);
            if (g(phys(state_from(y, k1, tmin))) > 0.0) return std::nullopt;
            return refine_root(y, k1, tmin, g);
        };
        for (std::size_t k = 0; k < ev.constraints.size(); ++k) {
            const auto& c = ev.constraints[k];
            const auto tau = detect([&](const Vector& x) { return c.value(x, p); },
                                    [&](const Vector& x, const Vector& fx) { return c.grad_x(x, p).dot(fx); });
            if (tau) crossings.emplace_back(*tau, static_cast<int>(k));
        }
        if (ev.product_threshold && !ev.constraints.empty()) {
            const double thr = *ev.product_threshold;
            const auto tau = detect([&](const Vector& x) { return product(x) - thr; },
                                    [&](const Vector& x, const Vector& fx) { return product_rate(x, fx); });
            if (tau) crossings.emplace_back(*tau, -1);
        }
        std::sort(crossings.begin(), crossings.end());

        // ||f|| local minimum at the previous accepted point.
        const double fn_new = f1.norm();
        std::optional<std::pair<double, Vector>> fmin;
        if (ev.detect_field_min && std::isfinite(fn_prev2) && fn_prev < fn_prev2 && fn_prev <= fn_new) {
            // Golden-section over [t_prev, t_new], stepping from whichever stored point precedes tau.
            const auto norm_at = [&](double s) {
                const Vector ys = s <= t ? state_from(y_prev, k_prev, s - t_prev) : state_from(y, k1, s - t);
                return std::make_pair(field(phys(ys)).norm(), ys);
            };
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            double a = t_prev, b = t_new;
            double c = b - gr * (b - a), d = a + gr * (b - a);
            double fc = norm_at(c).first, fd = norm_at(d).first;
            for (int it = 0; it < 100 && b - a > o.event_refine_tol; ++it) {
                if (fc < fd) {
                    b = d, d = c, fd = fc;
                    c = b - gr * (b - a);
                    fc = norm_at(c).first;
                } else {
                    a = c, c = d, fc = fd;
                    d = a + gr * (b - a);
                    fd = norm_at(d).first;
                }
            }
            const double tm = 0.5 * (a + b);
            auto [val, ym] = norm_at(tm);
            if (val <= ev.field_min_threshold) fmin.emplace(tm, ym);
        }

        // Emit events in time order; stop at the first terminal one.
        bool stop = false;
        std::size_t ci = 0;
        const auto emit_crossings_before = [&](double limit) {
            while (!stop && ci < crossings.size() && t + crossings[ci].first <= limit) {
                const auto [tau, idx] = crossings[ci++];
                const Vector ye = state_from(y, k1, tau);
                if (idx >= 0) {
                    push_event(t + tau, EventKind::ConstraintCrossing, ye, idx,
                               ev.constraints[static_cast<std::size_t>(idx)].value(phys(ye), p));
                    if (ev.terminal_on_crossing) {
                        finish_at(t + tau, ye);
                        stop = true;
                    }
                } else {
                    push_event(t + tau, EventKind::BoundaryApproach, ye, -1, product(phys(ye)));
                    if (ev.terminal_on_approach) {
                        finish_at(t + tau, ye);
                        stop = true;
                    }
                }
            }
        };
        if (fmin) {
            // A minimum located in the previous step precedes every crossing of this step.
            if (fmin->first <= t) {
                push_event(fmin->first, EventKind::FieldNormLocalMin, fmin->second, -1, field(phys(fmin->second)).norm());
                if (ev.terminal_on_field_min) {
                    // Trajectory already stored past fmin; trim back to keep times ordered.
                    while (!tr.times.empty() && tr.times.back() > fmin->first) {
                        tr.times.pop_back(), tr.states.pop_back(), tr.derivatives.pop_back(), out.aug.pop_back();
                    }
                    finish_at(fmin->first, fmin->second);
                    stop = true;
                }
            } else {
                emit_crossings_before(fmin->first);
                if (!stop) {
                    push_event(fmin->first, EventKind::FieldNormLocalMin, fmin->second, -1,
                               field(phys(fmin->second)).norm());
                    if (ev.terminal_on_field_min) {
                        finish_at(fmin->first, fmin->second);
                        stop = true;
                    }
                }
            }
        }
        emit_crossings_before(std::numeric_limits<double>::infinity());
        if (stop) return out;

        // Advance.
        y_prev = y, k_prev = k1, t_prev = t;
        y = y_new, k1 = k_new, t = t_new;
        fn_prev2 = fn_prev, fn_prev = fn_new;

        if (++since_sample >= std::max(1, o.sample_stride) || t >= o.t_max) {
            push_sample(t, y, k1);
            since_sample = 0;
        }

        if (ev.sep) {
            const double dist = (x1 - *ev.sep).norm();
            if (dist <= ev.sep_tol && fn_new < fn_prev2) {
                finish_at(t, y);
                push_event(t, EventKind::ConvergedToSep, y, -1, fn_new);
                return out;
            }
            if (dist > ev.divergence_radius) {
                finish_at(t, y);
                push_event(t, EventKind::Diverged, y, -1, dist);
                return out;
            }
        }

        h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(en, 1e-10), -0.2)));
        h = std::min(h, o.max_step);
    }
    finish_at(t, y);
    push_event(t, EventKind::HorizonReached, y, -1, field(phys(y)).norm());
    return out;
}

}  // namespace detail

inline Trajectory integrate(const ConstrainedSystem& sys, Phase phase, const Vector& x0, const Vector& p,
                            const IntegrationOptions& opts, const EventRequest& events = {}) {
    sys.check_dims(x0, p);
    const auto& dyn = sys.phase(phase).dynamics;
    auto rhs = [&dyn, &p](const Vector& y, Vector& dy) { dy = dyn.f(y, p); };
    auto field = [&dyn, &p](const Vector& x) { return dyn.f(x, p); };
    return detail::drive(rhs, x0.size(), x0, opts, events, field, p).traj;
}

struct SensitiveTrajectory {
    Trajectory trajectory;
    SensitivityBundle sensitivities;
};

/// Integrates x together with Phi_x' = A Phi_x and Phi_p' = A Phi_p + B,
/// A = df/dx, B = df/dp, as one augmented system under a shared step-size
/// control. Phi_x(0) = I, Phi_p(0) = 0.
inline SensitiveTrajectory integrate_with_sensitivities(const ConstrainedSystem& sys, Phase phase,
                                                        const Vector& x0, const Vector& p,
                                                        const IntegrationOptions& opts,
                                                        const EventRequest& events = {}) {
    sys.check_dims(x0, p);
    const auto& dyn = sys.phase(phase).dynamics;
    const Eigen::Index n = x0.size();
    const Eigen::Index np = p.size();
    const Eigen::Index len = n + n * n + n * np;

    auto rhs = [&dyn, &p, n, np](const Vector& y, Vector& dy) {
        dy.resize(y.size());
        const Vector x = y.head(n);
        const Matrix A = dyn.dfdx(x, p);
        const Matrix B = dyn.dfdp(x, p);
        dy.head(n) = dyn.f(x, p);
        const Eigen::Map<const Matrix> phx(y.data() + n, n, n);
        const Eigen::Map<const Matrix> php(y.data() + n + n * n, n, np);
        Eigen::Map<Matrix>(dy.data() + n, n, n) = A * phx;
        Eigen::Map<Matrix>(dy.data() + n + n * n, n, np) = A * php + B;
    };
    auto field = [&dyn, &p](const Vector& x) { return dyn.f(x, p); };

    Vector y0 = Vector::Zero(len);
    y0.head(n) = x0;
    Eigen::Map<Matrix>(y0.data() + n, n, n).setIdentity();

    auto raw = detail::drive(rhs, n, y0, opts, events, field, p);
    SensitiveTrajectory out;
    out.trajectory = std::move(raw.traj);
    const auto unpack = [n, np](const Vector& y, std::vector<Matrix>& px, std::vector<Matrix>& pp) {
        px.emplace_back(Eigen::Map<const Matrix>(y.data() + n, n, n));
        pp.emplace_back(Eigen::Map<const Matrix>(y.data() + n + n * n, n, np));
    };
    for (const auto& y : raw.aug) unpack(y, out.sensitivities.phi_x, out.sensitivities.phi_p);
    for (const auto& y : raw.event_aug) unpack(y, out.sensitivities.event_phi_x, out.sensitivities.event_phi_p);
    return out;
}

/// Cubic Hermite interpolation between stored samples.
inline Vector state_at(const Trajectory& traj, double t) {
    if (traj.empty() || t < traj.times.front() || t > traj.times.back())
        throw Error(ErrorCode::OutOfRange, "time " + std::to_string(t) + " outside trajectory span");
    const auto it = std::lower_bound(traj.times.begin(), traj.times.end(), t);
    const auto i = static_cast<std::size_t>(it - traj.times.begin());
    if (*it == t) return traj.states[i];
    const std::size_t i0 = i - 1;
    const double t0 = traj.times[i0], t1 = traj.times[i];
    const double hh = t1 - t0;
    const double s = (t - t0) / hh;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    return h00 * traj.states[i0] + h10 * hh * traj.derivatives[i0] + h01 * traj.states[i] +
           h11 * hh * traj.derivatives[i];
}

}  // namespace cctsens
