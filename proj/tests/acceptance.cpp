// Acceptance run: one PASS/FAIL line per criterion, with wall time against
// its limit. Exits 1 if any criterion fails.

#include "cctsens/commands.hpp"
#include "cctsens/validate.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace cctsens;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    const char* id;
    const char* title;
    double limit_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

Vector smib_p(double Pm, double M, double dmax = 1.0, double wmax = 0.8) {
    Vector p(4);
    p << Pm, M, dmax, wmax;
    return p;
}

ConstrainedSystem smib_sys() { return smib::make_system(smib::SmibParams{}); }

CctOptions with_tol(double tol) {
    CctOptions o;
    o.bisection_tol = tol;
    return o;
}

FdSlope fd_for(const ConstrainedSystem& sys, const Vector& p, std::size_t k, const CctOptions& o) {
    return fd_cct_slope(sys, p, k, default_fd_step(p[static_cast<Eigen::Index>(k)]), o);
}

// x' = -x with no parameters of interest and no limits.
ConstrainedSystem decay() {
    PhaseDefinition def;
    def.dynamics.f = [](const Vector& x, const Vector&) { return Vector(-x); };
    def.dynamics.dfdx = [](const Vector&, const Vector&) { return Matrix(-Matrix::Identity(1, 1)); };
    def.dynamics.dfdp = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
    return ConstrainedSystem(1, {"unused"}, def, def, def);
}

// Run at the tolerance used for sensitivity integration; the cheaper CCT
// default (rel 1e-8) lands at about 1.3e-8 by t = 5.
Outcome a1() {
    double worst_decay = 0.0;
    const IntegrationOptions tight = SensitivityOptions{}.integration;
    {
        const auto sys = decay();
        IntegrationOptions o = tight;
        o.t_max = 5.0;
        const auto tr = integrate(sys, Phase::PostFault, Vector::Ones(1), Vector::Zero(1), o);
        for (std::size_t i = 0; i < tr.times.size(); ++i)
            worst_decay = std::max(worst_decay, relative_error(tr.states[i][0], std::exp(-tr.times[i])));
    }
    double worst_fault = 0.0;
    const auto sys = smib_sys();
    for (const auto& [Pm, M] : std::vector<std::pair<double, double>>{{0.5, 0.1}, {0.8, 0.25}, {0.3, 0.05}}) {
        const Vector p = smib_p(Pm, M, 1e3, 1e3);
        IntegrationOptions o = tight;
        o.t_max = 2.0;
        const auto tr = integrate(sys, Phase::FaultOn, vec2(0.2, 0.0), p, o);
        for (std::size_t i = 1; i < tr.times.size(); ++i) {
            const double exact = (Pm / 0.5) * (1.0 - std::exp(-0.5 * tr.times[i] / M));
            worst_fault = std::max(worst_fault, relative_error(tr.states[i][1], exact));
        }
    }
    return {worst_decay <= 1e-8 && worst_fault <= 1e-6,
            fmt("rel_tol %.0e: max rel err x'=-x %.2e (<=1e-8), ", tight.rel_tol, worst_decay) +
                fmt("fault-on speed %.2e (<=1e-6)", worst_fault)};
}

Outcome a2() {
    const auto sys = smib_sys();
    std::mt19937_64 gen(2024);
    const auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); };
    IntegrationOptions io{1e-11, 1e-13};
    double worst_fd = 0.0, worst_chain = 0.0;
    for (const Phase ph : {Phase::PreFault, Phase::FaultOn, Phase::PostFault}) {
        for (int trial = 0; trial < 20; ++trial) {
            const Vector x0 = vec2(u(-1.0, 1.5), u(-1.0, 1.0));
            const Vector p = smib_p(u(0.2, 0.9), u(0.05, 0.4), u(0.5, 2.0), u(0.5, 2.0));
            const double t = u(0.1, 1.0);
            const auto k = static_cast<std::size_t>(trial % 4);
            io.t_max = t;
            const auto st = integrate_with_sensitivities(sys, ph, x0, p, io);
            const auto [dx, dp] = fd_trajectory_sensitivity(sys, ph, x0, p, t, k, 1e-6, io);
            worst_fd = std::max(worst_fd, relative_error(st.sensitivities.phi_x.back(), dx));
            const Vector col = st.sensitivities.phi_p.back().col(static_cast<Eigen::Index>(k));
            worst_fd = std::max(worst_fd, relative_error(col, dp));

            // Phi_x(t, x0) = Phi_x(t - s, x(s)) Phi_x(s, x0)
            IntegrationOptions half = io;
            half.t_max = 0.4 * t;
            const auto a = integrate_with_sensitivities(sys, ph, x0, p, half);
            half.t_max = t - 0.4 * t;
            const auto b = integrate_with_sensitivities(sys, ph, a.trajectory.final_state(), p, half);
            const Matrix chained = b.sensitivities.phi_x.back() * a.sensitivities.phi_x.back();
            worst_chain = std::max(worst_chain, relative_error(chained, st.sensitivities.phi_x.back()));
        }
    }
    return {worst_fd <= 1e-3 && worst_chain <= 1e-6,
            fmt("60 cases: max rel err vs FD %.2e (<=1e-3), chain %.2e (<=1e-6)", worst_fd, worst_chain)};
}

Outcome a3() {
    const auto sys = smib_sys();
    double worst = 0.0, off = 0.0;
    for (const double Pm : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const Vector p = smib_p(Pm, 0.1);
        const auto eq = find_equilibrium(sys, Phase::PreFault, p, vec2(0.0, 0.0));
        const Matrix s = sep_sensitivity(sys, Phase::PreFault, p, eq.x_s);
        worst = std::max(worst, relative_error(s(0, smib::kPm), 1.0 / std::cos(std::asin(Pm))));
        off = std::max({off, std::abs(s(1, smib::kPm)), s.rightCols(3).cwiseAbs().maxCoeff()});
    }
    return {worst <= 1e-8 && off <= 1e-8,
            fmt("dx_s1/dPm max rel err %.2e (<=1e-8), other entries max %.2e", worst, off)};
}

// Pm sweep at M = 0.1: every point in mode 1, every parameter checked.
Outcome a4() {
    const auto sys = smib_sys();
    const CctOptions o;
    int n = 0, ok = 0;
    double worst = 0.0, prev = INFINITY;
    bool decreasing = true, mode1 = true;
    for (int i = 0; i < 9; ++i) {
        const double Pm = 0.45 + 0.025 * i;
        const Vector p = smib_p(Pm, 0.1);
        const auto r = compute_cct(sys, p, o);
        mode1 = mode1 && r.mode == InstabilityMode::Mode1FaultHitsBoundary;
        decreasing = decreasing && r.t_cr < prev;
        prev = r.t_cr;
        for (std::size_t k = 0; k < 4; ++k) {
            const auto s = cct_sensitivity(sys, p, r, k);
            const auto rep =
                slope_report("", s.dtcl_dp, fd_for(sys, p, k, o), r.t_cr, p[static_cast<Eigen::Index>(k)], 0.05, 1e-6);
            ++n;
            ok += rep.pass;
            if (k == smib::kPm) worst = std::max(worst, rep.rel_error);
        }
    }
    return {mode1 && decreasing && ok == n,
            std::to_string(ok) + "/" + std::to_string(n) + " slopes within 5%, worst Pm rel err " +
                fmt("%.2e", worst) + (mode1 ? ", all mode 1" : ", NOT all mode 1") +
                (decreasing ? ", CCT strictly decreasing in Pm" : ", CCT NOT decreasing")};
}

// M = 0.25 needs a tight bisection tolerance to resolve the mode-2 limit point.
Outcome a5() {
    const auto sys = smib_sys();
    const auto o = with_tol(1e-6);
    const Vector p = smib_p(0.5, 0.25);
    const auto r = compute_cct(sys, p, o);
    if (r.mode != InstabilityMode::Mode2PostHitsBoundary)
        return {false, "mode at M=0.25 is " + std::string(to_string(r.mode))};
    int ok = 0;
    double dM = 0.0;
    std::string rows;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto s = cct_sensitivity(sys, p, r, k);
        const auto fd = fd_for(sys, p, k, o);
        const auto rep = slope_report("", s.dtcl_dp, fd, r.t_cr, p[static_cast<Eigen::Index>(k)], 0.05, 1e-6);
        ok += rep.pass;
        rows += " " + sys.param_names()[k] + fmt(" %.5g/%.5g", s.dtcl_dp, fd.slope);
        if (k == smib::kM) dM = s.dtcl_dp;
    }
    return {ok == 4 && dM > 0.0, "mode 2, " + std::to_string(ok) + "/4 within 5% or both inert (analytic/fd:" +
                                     rows + "), dtcl/dM > 0"};
}

// M sweep across the mode switch.
Outcome a6() {
    const auto sys = smib_sys();
    const auto o = with_tol(1e-6);
    std::vector<InstabilityMode> modes;
    int checked[2] = {0, 0}, silent_bad = 0, flagged = 0;
    for (int i = 0; i <= 20; ++i) {
        const double M = 0.1 + 0.01 * i;
        const Vector p = smib_p(0.5, M);
        const auto r = compute_cct(sys, p, o);
        modes.push_back(r.mode);
        const auto s = cct_sensitivity(sys, p, r, smib::kM);
        bool diagnosed = !s.warnings.empty();
        bool pass = false;
        try {
            pass = slope_report("", s.dtcl_dp, fd_for(sys, p, smib::kM, o), r.t_cr, M, 0.05, 1e-6).pass;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ModeChangedAcrossStep) throw;
            diagnosed = true;
        }
        if (pass && !diagnosed) ++checked[r.mode == InstabilityMode::Mode2PostHitsBoundary];
        if (diagnosed) ++flagged;
        if (!pass && !diagnosed) ++silent_bad;
    }
    int switches = 0;
    for (std::size_t i = 1; i < modes.size(); ++i) switches += modes[i] != modes[i - 1];
    const bool ordered = modes.front() == InstabilityMode::Mode1FaultHitsBoundary &&
                         modes.back() == InstabilityMode::Mode2PostHitsBoundary && switches == 1;

    // Locate the switch in M and look at it from both sides.
    double lo = 0.1, hi = 0.3;
    while (hi - lo > 1e-4) {
        const double mid = 0.5 * (lo + hi);
        (compute_cct(sys, smib_p(0.5, mid), o).mode == InstabilityMode::Mode1FaultHitsBoundary ? lo : hi) = mid;
    }
    int near_flagged = 0;
    for (const double M : {lo - 5e-4, hi + 5e-4}) {
        const Vector p = smib_p(0.5, M);
        const auto r = compute_cct(sys, p, o);
        const auto s = cct_sensitivity(sys, p, r, smib::kM);
        bool diag = !s.warnings.empty();
        try {
            fd_cct_slope(sys, p, smib::kM, 2e-3, o);
        } catch (const Error& e) {
            diag = diag || e.code() == ErrorCode::ModeChangedAcrossStep;
        }
        near_flagged += diag;
    }
    return {ordered && checked[0] >= 3 && checked[1] >= 3 && silent_bad == 0 && near_flagged == 2,
            fmt("switch at M=%.4f; ", 0.5 * (lo + hi)) + "validated mode1 " + std::to_string(checked[0]) +
                ", mode2 " + std::to_string(checked[1]) + ", flagged " + std::to_string(flagged) +
                ", unflagged bad slopes " + std::to_string(silent_bad) + ", switch neighbours flagged " +
                std::to_string(near_flagged) + "/2"};
}

bool bracket_ok(const CriticalResult& r) {
    double s = -INFINITY, u = INFINITY;
    for (const auto& h : r.history) {
        if (h.t_stable < s || h.t_unstable > u || h.t_stable >= h.t_unstable) return false;
        s = h.t_stable;
        u = h.t_unstable;
    }
    return true;
}

Outcome a7() {
    const auto sys = smib_sys();
    std::vector<std::pair<Vector, double>> cases;
    for (int i = 0; i < 9; ++i) cases.emplace_back(smib_p(0.45 + 0.025 * i, 0.1), 1e-2);
    for (int i = 0; i <= 20; ++i) cases.emplace_back(smib_p(0.5, 0.1 + 0.01 * i), 1e-2);
    for (const double M : {0.1, 0.22, 0.25}) cases.emplace_back(smib_p(0.5, M), 1e-3);
    int agree = 0, monotone = 0, brackets = 0;
    double worst = 0.0;
    for (const auto& [p, tol] : cases) {
        const auto o = with_tol(tol);
        const auto r = compute_cct(sys, p, o);
        const auto s = scan_cct(sys, p, tol / 10, o);
        const double gap = std::abs(s.cct - r.t_cr);
        worst = std::max(worst, gap / tol);
        agree += gap <= tol;
        monotone += s.monotone;
        brackets += bracket_ok(r);
    }
    const int n = static_cast<int>(cases.size());
    return {agree == n && monotone == n && brackets == n,
            std::to_string(agree) + "/" + std::to_string(n) + " within one tolerance (worst gap " +
                fmt("%.2f", worst) + " tol), monotone scans " + std::to_string(monotone) + ", monotone brackets " +
                std::to_string(brackets)};
}

// Random points on the limit lines; the pseudo-EP sign must match which way a
// trajectory started just inside the limit moves relative to it.
Outcome a8() {
    const auto sys = smib_sys();
    std::mt19937_64 gen(8);
    const auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); };
    IntegrationOptions o;
    o.t_max = 1e-3;
    o.rel_tol = 1e-12;
    o.abs_tol = 1e-14;
    const double band = 1e-3;  // |Hdot| / (|grad H| |f|) below this is noise at the displacement scale
    int tested = 0, agree = 0, semi = 0, semi_ok = 0, skipped = 0;
    while (tested < 1000) {
        const Vector p = smib_p(u(0.2, 0.9), u(0.05, 0.4), u(0.6, 2.0), u(0.4, 1.5));
        const bool on_angle = u(0, 1) < 0.5;
        const Vector x = on_angle ? vec2(p[smib::kDeltaMax], u(-3.0, p[smib::kOmegaMax]))
                                  : vec2(u(-3.0, p[smib::kDeltaMax]), p[smib::kOmegaMax]);
        const auto c = classify_pseudo_ep(sys, Phase::PostFault, x, p);
        if (c.tag == PseudoEpTag::SemiSaddle) {
            ++semi;
            semi_ok += std::abs(c.H_value) <= 1e-8 && std::abs(c.H_dot_value) <= c.H_dot_tol;
            continue;
        }
        const auto pv = eval_product(sys.constraints(Phase::PostFault), x, p);
        if (std::abs(c.H_dot_value) <= band * pv.grad_x.norm() * eval_f(sys, Phase::PostFault, x, p).norm()) {
            ++skipped;
            continue;
        }
        const Constraint& h = sys.constraints(Phase::PostFault)[on_angle ? 0 : 1];
        const Vector g = h.grad_x(x, p);
        const Vector inside = x + 1e-4 * g / g.norm();
        const Vector end = integrate(sys, Phase::PostFault, inside, p, o).final_state();
        const bool approaches = h.value(end, p) < h.value(inside, p);
        agree += approaches == (c.tag == PseudoEpTag::StablePseudoEp);
        ++tested;
    }

    // Semi-saddles found by the grid annotator.
    GridSpec spec;
    spec.x1_min = spec.x2_min = -1.5;
    spec.x1_max = spec.x2_max = 1.5;
    spec.n1 = spec.n2 = 40;
    const Vector p = smib_p(0.5, 0.2);
    for (const auto& b : sample_stability_region(sys, p, spec).boundary) {
        if (b.annotation != BoundaryAnnotation::SemiSaddlePoint) continue;
        ++semi;
        const auto c = classify_pseudo_ep(sys, Phase::PostFault, vec2(b.x1, b.x2), p);
        semi_ok += std::abs(c.H_value) <= 1e-8 && std::abs(c.H_dot_value) <= c.H_dot_tol;
    }
    return {agree >= 990 && semi_ok == semi && semi > 0,
            std::to_string(agree) + "/1000 agree with displaced integration (" + std::to_string(skipped) +
                " in noise band skipped), semi-saddles within tolerance " + std::to_string(semi_ok) + "/" +
                std::to_string(semi)};
}

// Stable cells in the grid row through x2 = 0.
std::vector<bool> axis_row(const SrGrid& g, int j) {
    std::vector<bool> row;
    for (int i = 0; i < g.spec.n1; ++i) row.push_back(g.at(i, j) == CellClass::Stable);
    return row;
}

Outcome a9() {
    const auto sys = smib_sys();
    GridSpec spec;
    spec.x1_min = -1.5;
    spec.x1_max = 1.5;
    // cell height 0.03 with row 50 centred on x2 = 0
    spec.x2_min = -1.515;
    spec.x2_max = 1.485;
    spec.n1 = spec.n2 = 100;
    const int j0 = 50;
    SrOptions so;
    SrOptions tight = so;
    tight.integration.rel_tol = 1e-11;
    tight.integration.abs_tol = 1e-13;
    tight.integration.max_step = 0.02;

    std::size_t stable_total = 0, reclassified = 0;
    std::vector<std::vector<bool>> rows;
    std::vector<int> extent;
    for (const double M : {0.1, 0.3}) {
        const Vector p = smib_p(0.5, M);
        const auto g = sample_stability_region(sys, p, spec, so);
        for (int j = 0; j < spec.n2; ++j)
            for (int i = 0; i < spec.n1; ++i) {
                if (g.at(i, j) != CellClass::Stable) continue;
                ++stable_total;
                reclassified += detail::classify_cell(sys, p, vec2(spec.x1(i), spec.x2(j)), g.sep, tight) !=
                                CellClass::Stable;
            }
        rows.push_back(axis_row(g, j0));
        int n = 0;
        for (const bool b : rows.back()) n += b;
        extent.push_back(n);
    }
    bool nested = true;
    for (std::size_t i = 0; i < rows[0].size(); ++i) nested = nested && (!rows[0][i] || rows[1][i]);
    const double cell = (spec.x1_max - spec.x1_min) / spec.n1;
    return {reclassified == 0 && nested && extent[1] > extent[0],
            std::to_string(stable_total - reclassified) + "/" + std::to_string(stable_total) +
                " stable cells reconfirmed; extent along x1 at x2=0: " + fmt("%.2f (M=0.1) -> %.2f (M=0.3)",
                                                                           extent[0] * cell, extent[1] * cell) +
                (nested ? ", nested" : ", NOT nested")};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome a10(double& single_run) {
    const fs::path dir = fs::temp_directory_path() / "cctsens_acceptance_a10";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Json cfg = Json::parse(R"({
        "system": {"kind": "smib", "Pm": 0.5, "M": 0.1, "D": 0.5, "delta_max": 1.0, "omega_max": 0.8},
        "sweep": {"parameter": "M", "from": 0.1, "to": 0.3, "count": 21},
        "tolerances": {"bisection_tol": 1e-6}})");
    std::ofstream(dir / "sweep.json") << cfg.dump(2);
    std::vector<std::string> out;
    for (const char* sub : {"a", "b"}) {
        CommandOptions co;
        co.out = dir / sub;
        const auto t0 = std::chrono::steady_clock::now();
        const int rc = run_command("sweep", (dir / "sweep.json").string(), "", co);
        single_run = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (rc != kExitOk) return {false, "sweep exited with " + std::to_string(rc)};
        out.push_back(slurp(co.out / "sweep.csv"));
    }
    fs::remove_all(dir);
    const bool same = out[0] == out[1] && !out[0].empty();
    return {same, std::string(same ? "identical" : "DIFFERENT") + " sweep.csv over two runs (" +
                      std::to_string(out[0].size()) + " bytes)"};
}

}  // namespace

int main() {
    double sweep_time = 0.0;
    const std::vector<Criterion> criteria{
        {"A1", "integrator accuracy", 1.0, a1},
        {"A2", "trajectory sensitivities", 10.0, a2},
        {"A3", "SEP sensitivity", 1.0, a3},
        {"A4", "mode-1 tangency over Pm", 120.0, a4},
        {"A5", "mode-2 tangency at M=0.25", 120.0, a5},
        {"A6", "mode switch over M", 120.0, a6},
        {"A7", "bisection vs brute-force scan", 120.0, a7},
        {"A8", "pseudo-EP classification", 30.0, a8},
        {"A9", "SR grid 100x100", 300.0, a9},
        {"A10", "sweep determinism", 0.0, [&] { return a10(sweep_time); }},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        // the determinism limit is twice one sweep; allow a little for the file comparison
        const double limit = c.limit_s > 0.0 ? c.limit_s : 2.0 * sweep_time + 1.0;
        const bool in_time = dt < limit;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("%-4s %s  %s: %s [%.2f s, limit %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.title,
                    o.detail.c_str(), dt, limit, in_time ? "" : ", OVER TIME");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
