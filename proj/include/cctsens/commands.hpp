#pragma once

// Subcommand implementations behind the cctsens executable. Each command reads
// a loaded RunConfig, writes its files into the output directory and returns
// the process exit code.

#include "cctsens/boundary.hpp"
#include "cctsens/cct.hpp"
#include "cctsens/config.hpp"
#include "cctsens/parallel.hpp"
#include "cctsens/report.hpp"
#include "cctsens/sensitivity.hpp"
#include "cctsens/validate.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cctsens {

enum ExitCode : int { kExitOk = 0, kExitComputation = 1, kExitConfig = 2, kExitValidation = 3 };

struct CommandOptions {
    std::filesystem::path out = ".";
    bool verify = false;
    int jobs = 1;
};

namespace detail {

inline std::ofstream open_output(const CommandOptions& co, const std::string& name) {
    std::error_code ec;
    std::filesystem::create_directories(co.out, ec);
    std::ofstream os(co.out / name, std::ios::binary);
    if (!os) throw Error(ErrorCode::ConfigError, "cannot write '" + (co.out / name).string() + "'");
    return os;
}

inline Json vec_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string opt_cell(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

inline std::string join(const std::vector<std::string>& parts, const char* sep = "; ") {
    std::string out;
    for (const auto& s : parts) out += (out.empty() ? "" : sep) + s;
    return out;
}

inline Json header(const RunConfig& rc, const char* command) {
    Json doc;
    doc["command"] = command;
    doc["config_hash"] = rc.hash;
    doc["system"] = rc.kind;
    Json params = Json::object();
    for (std::size_t k = 0; k < rc.sys().np(); ++k)
        params[rc.sys().param_names()[k]] = rc.p0[static_cast<Eigen::Index>(k)];
    doc["parameters"] = params;
    return doc;
}

inline Json error_json(const Error& e) { return {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}; }

inline std::vector<std::string> state_columns(std::size_t n) {
    std::vector<std::string> cols{"t"};
    for (std::size_t i = 0; i < n; ++i) cols.push_back("x" + std::to_string(i + 1));
    cols.emplace_back("H");
    return cols;
}

template <typename HFn>
void write_trajectory(const CommandOptions& co, const std::string& name, const RunConfig& rc, const Trajectory& tr,
                      HFn H) {
    auto os = open_output(co, name);
    CsvWriter csv(os, rc.hash, state_columns(rc.sys().n()));
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        std::vector<std::string> row{format_number(tr.times[i])};
        for (Eigen::Index j = 0; j < tr.states[i].size(); ++j) row.push_back(format_number(tr.states[i][j]));
        row.push_back(format_number(H(tr.states[i])));
        csv.row(row);
    }
}

// Brute-force scan step: a tenth of the bisection tolerance, but never finer
// than 1e-4 so a tight bisection does not turn the scan into millions of runs.
inline double scan_step(const RunConfig& rc) {
    return std::max(rc.tol.cct.bisection_tol * rc.tol.scan_step_factor, 1e-4);
}

// Allowed |scan - bisection| gap: one bisection tolerance or one scan step.
inline double scan_agreement(const RunConfig& rc) { return std::max(rc.tol.cct.bisection_tol, scan_step(rc)); }

inline FdSlope fd_slope_for(const RunConfig& rc, const Vector& p, std::size_t k) {
    const double eps = default_fd_step(p[static_cast<Eigen::Index>(k)], rc.tol.fd_rel_step, rc.tol.fd_floor);
    return fd_cct_slope(rc.sys(), p, k, eps, rc.tol.cct);
}

}  // namespace detail

inline int run_cct(const RunConfig& rc, const CommandOptions& co) {
    using namespace detail;
    const auto& sys = rc.sys();
    Json doc = header(rc, "cct");
    CriticalResult r;
    try {
        r = compute_cct(sys, rc.p0, rc.tol.cct);
    } catch (const Error& e) {
        doc["error"] = error_json(e);
        auto os = open_output(co, "cct.json");
        write_json(os, doc);
        std::cerr << "cct: " << e.what() << '\n';
        return kExitComputation;
    }

    Json res;
    res["t_stable"] = r.t_stable;
    res["t_unstable"] = r.t_unstable;
    res["t_cr"] = r.t_cr;
    res["x_cr"] = vec_json(r.x_cr);
    res["mode"] = std::string(to_string(r.mode));
    res["mode_number"] = mode_number(r.mode);
    res["T"] = r.T;
    res["x_T"] = vec_json(r.x_T);
    res["t1"] = opt_json(r.t1);
    res["t2"] = opt_json(r.t2);
    res["H_raw_at_T"] = r.H_raw_at_T;
    res["H_normalized_at_T"] = r.H_normalized_at_T;
    res["H_comb_at_x_cr"] = r.H_comb_at_x_cr;
    res["sustained_hit_time"] = opt_json(r.sustained_hit_time);
    res["x_s_pre"] = vec_json(r.context.x_s_pre);
    res["x_s_post"] = vec_json(r.context.x_s_post);
    res["iterations"] = r.iterations;
    const auto& last = r.critical_post_trajectory.events.back();
    res["horizon_reached"] = last.kind == EventKind::HorizonReached;
    doc["result"] = res;
    Json hist = Json::array();
    for (const auto& h : r.history)
        hist.push_back({{"t_stable", h.t_stable}, {"t_unstable", h.t_unstable}, {"t_cl", h.t_cl}, {"stable", h.stable}});
    doc["history"] = hist;

    int code = kExitOk;
    if (co.verify) {
        Json v;
        try {
            const double step = scan_step(rc);
            const auto scan = scan_cct(sys, rc.p0, step, rc.tol.cct, co.jobs);
            const double diff = std::abs(scan.cct - r.t_cr);
            const bool pass = diff <= scan_agreement(rc) && scan.monotone;
            v = {{"oracle", "scan_cct"},  {"step", step},         {"scan_cct", scan.cct},
                 {"abs_diff", diff},      {"tolerance", scan_agreement(rc)},
                 {"monotone", scan.monotone}, {"violations", scan.violations}, {"pass", pass}};
            if (!pass) code = kExitValidation;
        } catch (const Error& e) {
            v = {{"oracle", "scan_cct"}, {"error", error_json(e)}, {"pass", false}};
            code = kExitValidation;
        }
        doc["verify"] = v;
    }
    {
        auto os = open_output(co, "cct.json");
        write_json(os, doc);
    }
    const auto comb = combined_constraints(sys).constraints;
    write_trajectory(co, "fault_trajectory.csv", rc, r.fault_trajectory,
                     [&](const Vector& x) { return eval_product(comb, x, rc.p0).value; });
    write_trajectory(co, "post_trajectory.csv", rc, r.critical_post_trajectory,
                     [&](const Vector& x) { return eval_H(sys, Phase::PostFault, x, rc.p0); });
    return code;
}

inline int run_sens(const RunConfig& rc, const CommandOptions& co) {
    using namespace detail;
    const auto& sys = rc.sys();
    Json doc = header(rc, "sens");
    CriticalResult r;
    try {
        r = compute_cct(sys, rc.p0, rc.tol.cct);
    } catch (const Error& e) {
        doc["error"] = error_json(e);
        auto os = open_output(co, "sens.json");
        write_json(os, doc);
        std::cerr << "sens: " << e.what() << '\n';
        return kExitComputation;
    }
    doc["cct"] = {{"t_cr", r.t_cr}, {"mode", std::string(to_string(r.mode))}, {"mode_number", mode_number(r.mode)},
                  {"T", r.T}};

    struct Row {
        std::optional<CctSensitivity> s;
        std::optional<Error> error;
        std::optional<OracleReport> check;
        std::string check_status;
    };
    const auto rows = parallel_map(rc.active.size(), co.jobs, [&](std::size_t i) {
        const std::size_t k = rc.active[i];
        Row row;
        try {
            row.s = cct_sensitivity(sys, rc.p0, r, k, rc.tol.sens);
        } catch (const Error& e) {
            row.error = e;
            return row;
        }
        if (co.verify) {
            try {
                const auto fd = fd_slope_for(rc, rc.p0, k);
                row.check = slope_report("dtcl/d" + sys.param_names()[k], row.s->dtcl_dp, fd, r.t_cr,
                                         rc.p0[static_cast<Eigen::Index>(k)], rc.tol.tangency, rc.tol.fd_floor);
                row.check_status = row.check->pass ? "pass" : "fail";
            } catch (const Error& e) {
                row.check_status = std::string(to_string(e.code()));
            }
        }
        return row;
    });

    auto os = open_output(co, "sens.csv");
    std::vector<std::string> cols{"parameter", "mode", "dtcl_dp", "dT_dp", "pivot", "condition", "status", "warnings"};
    if (co.verify) cols.insert(cols.end(), {"fd_slope", "fd_eps", "rel_error", "check"});
    CsvWriter csv(os, rc.hash, cols);
    Json items = Json::array();
    int code = kExitOk;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& row = rows[i];
        const std::string& name = sys.param_names()[rc.active[i]];
        Json item{{"parameter", name}};
        std::vector<std::string> cells{name, std::to_string(mode_number(r.mode))};
        if (row.s) {
            cells.insert(cells.end(), {format_number(row.s->dtcl_dp), opt_cell(row.s->dT_dp),
                                       format_number(row.s->pivot), format_number(row.s->condition), "ok",
                                       join(row.s->warnings)});
            item["dtcl_dp"] = row.s->dtcl_dp;
            item["dT_dp"] = opt_json(row.s->dT_dp);
            item["pivot"] = row.s->pivot;
            item["condition"] = row.s->condition;
            item["warnings"] = row.s->warnings;
        } else {
            cells.insert(cells.end(), {"", "", "", "", std::string(to_string(row.error->code())), row.error->what()});
            item["error"] = error_json(*row.error);
            code = kExitComputation;
        }
        if (co.verify) {
            if (row.check) {
                cells.insert(cells.end(), {format_number(row.check->oracle), row.check->steps.substr(4),
                                           format_number(row.check->rel_error), row.check_status});
                item["verify"] = {{"fd_slope", row.check->oracle}, {"rel_error", row.check->rel_error},
                                  {"tolerance", row.check->tolerance}, {"check", row.check_status}};
                if (!row.check->pass && code == kExitOk) code = kExitValidation;
            } else {
                cells.insert(cells.end(), {"", "", "", row.check_status});
                item["verify"] = {{"check", row.check_status}};
            }
        }
        csv.row(cells);
        items.push_back(item);
    }
    doc["sensitivities"] = items;
    auto js = open_output(co, "sens.json");
    write_json(js, doc);
    return code;
}

inline int run_sweep(const RunConfig& rc, const CommandOptions& co) {
    using namespace detail;
    if (!rc.sweep) throw Error(ErrorCode::ConfigError, "the sweep command needs a 'sweep' section");
    const auto& sys = rc.sys();
    const SweepSpec& sw = *rc.sweep;
    const std::size_t k = sw.parameter;
    struct Point {
        double value = 0.0;
        std::optional<CriticalResult> r;
        std::optional<CctSensitivity> s;
        std::string status = "ok";
        std::string note;
        std::optional<OracleReport> check;
        std::string check_status;
    };
    const auto points = parallel_map(static_cast<std::size_t>(sw.count), co.jobs, [&](std::size_t i) {
        Point pt;
        pt.value = sw.value(static_cast<int>(i));
        Vector p = rc.p0;
        p[static_cast<Eigen::Index>(k)] = pt.value;
        try {
            pt.r = compute_cct(sys, p, rc.tol.cct);
        } catch (const Error& e) {
            pt.status = std::string(to_string(e.code()));
            pt.note = e.what();
            return pt;
        }
        if (sw.tangents || co.verify) {
            try {
                pt.s = cct_sensitivity(sys, p, *pt.r, k, rc.tol.sens);
                pt.note = join(pt.s->warnings);
            } catch (const Error& e) {
                pt.note = std::string(e.what());
            }
        }
        if (co.verify && pt.s) {
            try {
                const auto fd = fd_slope_for(rc, p, k);
                pt.check = slope_report("dtcl/d" + sys.param_names()[k], pt.s->dtcl_dp, fd, pt.r->t_cr, pt.value,
                                        rc.tol.tangency, rc.tol.fd_floor);
                pt.check_status = pt.check->pass ? "pass" : "fail";
            } catch (const Error& e) {
                pt.check_status = std::string(to_string(e.code()));
            }
        }
        return pt;
    });

    auto os = open_output(co, "sweep.csv");
    std::vector<std::string> cols{sys.param_names()[k], "cct", "mode", "t_stable", "t_unstable", "T",
                                  "dtcl_dp", "tangent_intercept", "status", "notes"};
    if (co.verify) cols.insert(cols.end(), {"fd_slope", "rel_error", "check"});
    CsvWriter csv(os, rc.hash, cols);
    int code = kExitOk;
    for (const auto& pt : points) {
        std::vector<std::string> cells{format_number(pt.value)};
        if (pt.r) {
            const bool tangent = pt.s.has_value() && sw.tangents;
            cells.insert(cells.end(),
                         {format_number(pt.r->t_cr), std::to_string(mode_number(pt.r->mode)),
                          format_number(pt.r->t_stable), format_number(pt.r->t_unstable), format_number(pt.r->T),
                          tangent ? format_number(pt.s->dtcl_dp) : "",
                          tangent ? format_number(pt.r->t_cr - pt.s->dtcl_dp * pt.value) : "", pt.status, pt.note});
        } else {
            cells.insert(cells.end(), {"", "", "", "", "", "", "", pt.status, pt.note});
            code = kExitComputation;
        }
        if (co.verify) {
            if (pt.check) {
                cells.insert(cells.end(),
                             {format_number(pt.check->oracle), format_number(pt.check->rel_error), pt.check_status});
                if (!pt.check->pass && code == kExitOk) code = kExitValidation;
            } else {
                cells.insert(cells.end(), {"", "", pt.check_status});
            }
        }
        csv.row(cells);
    }
    return code;
}

inline int run_sr_grid(const RunConfig& rc, const CommandOptions& co) {
    using namespace detail;
    if (!rc.grid) throw Error(ErrorCode::ConfigError, "the sr-grid command needs a 'grid' section");
    if (rc.sys().n() != 2) throw Error(ErrorCode::ConfigError, "stability-region grids need a planar (n = 2) system");
    SrOptions so;
    so.integration = rc.tol.cct.integration;
    so.sep_guess = rc.tol.cct.sep_guess;
    so.sep_tol = rc.tol.cct.sep_tol;
    so.divergence_radius = rc.tol.sr_divergence_radius;
    so.jobs = co.jobs;
    SrGrid g;
    try {
        g = sample_stability_region(rc.sys(), rc.p0, *rc.grid, so);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        std::cerr << "sr-grid: " << e.what() << '\n';
        return kExitComputation;
    }
    {
        auto os = open_output(co, "sr_cells.csv");
        CsvWriter csv(os, rc.hash, {"i", "j", "x1", "x2", "class"});
        for (int j = 0; j < g.spec.n2; ++j)
            for (int i = 0; i < g.spec.n1; ++i)
                csv.row({std::to_string(i), std::to_string(j), format_number(g.spec.x1(i)), format_number(g.spec.x2(j)),
                         std::string(to_string(g.at(i, j)))});
    }
    {
        auto os = open_output(co, "sr_boundary.csv");
        CsvWriter csv(os, rc.hash, {"x1", "x2", "annotation", "constraint", "H_dot"});
        for (const auto& b : g.boundary)
            csv.row({format_number(b.x1), format_number(b.x2), std::string(to_string(b.annotation)), b.constraint,
                     format_number(b.H_dot)});
    }
    if (!co.verify) return kExitOk;

    // Re-simulate every Stable cell at tighter tolerances.
    SrOptions tight = so;
    tight.integration.rel_tol *= 1e-2;
    tight.integration.abs_tol *= 1e-2;
    std::vector<std::size_t> stable;
    for (std::size_t c = 0; c < g.cells.size(); ++c)
        if (g.cells[c] == CellClass::Stable) stable.push_back(c);
    const auto recheck = parallel_map(stable.size(), co.jobs, [&](std::size_t s) {
        const std::size_t c = stable[s];
        const int i = static_cast<int>(c % static_cast<std::size_t>(g.spec.n1));
        const int j = static_cast<int>(c / static_cast<std::size_t>(g.spec.n1));
        Vector x0(2);
        x0 << g.spec.x1(i), g.spec.x2(j);
        return detail::classify_cell(rc.sys(), rc.p0, x0, g.sep, tight) == CellClass::Stable ? 1 : 0;
    });
    std::size_t bad = 0;
    for (const int ok : recheck) bad += ok ? 0 : 1;
    auto os = open_output(co, "sr_verify.csv");
    CsvWriter csv(os, rc.hash, {"stable_cells", "reclassified", "pass"});
    csv.row({std::to_string(stable.size()), std::to_string(bad), bad == 0 ? "true" : "false"});
    return bad == 0 ? kExitOk : kExitValidation;
}

inline const std::vector<std::string>& validate_quantity_names() {
    static const std::vector<std::string> names{"jacobian", "sep_sensitivity", "trajectory_sensitivity", "cct_scan",
                                                "cct_slope"};
    return names;
}

inline int run_validate(const RunConfig& rc, const CommandOptions& co) {
    using namespace detail;
    const auto& sys = rc.sys();
    const auto& p = rc.p0;
    std::vector<std::string> wanted = rc.validate_quantities;
    for (const auto& q : wanted)
        if (std::find(validate_quantity_names().begin(), validate_quantity_names().end(), q) ==
            validate_quantity_names().end())
            throw Error(ErrorCode::ConfigError, "unknown validation quantity '" + q + "'");
    if (wanted.empty()) wanted = validate_quantity_names();
    const auto want = [&](const char* q) { return std::find(wanted.begin(), wanted.end(), q) != wanted.end(); };

    std::vector<OracleReport> rows;
    const auto fail_row = [&](const std::string& quantity, const Error& e) {
        OracleReport r;
        r.quantity = quantity;
        r.analytic = r.oracle = r.rel_error = std::numeric_limits<double>::quiet_NaN();
        r.steps = std::string(e.what());
        rows.push_back(r);
    };

    CctContext ctx;
    try {
        ctx = make_context(sys, p, rc.tol.cct);
    } catch (const Error& e) {
        std::cerr << "validate: " << e.what() << '\n';
        return kExitComputation;
    }

    if (want("jacobian")) {
        for (const Phase ph : {Phase::PreFault, Phase::FaultOn, Phase::PostFault}) {
            const auto an = eval_jacobians(sys, ph, ctx.x_s_pre, p);
            const auto fd = fd_jacobians(sys, ph, ctx.x_s_pre, p);
            const std::string tag = std::string("[") + std::string(to_string(ph)) + "]";
            auto r1 = make_report("jacobian_x" + tag, an.dfdx.norm(), fd.dfdx.norm(), 1e-6, "rel_eps=1e-06");
            r1.rel_error = relative_error(an.dfdx, fd.dfdx);
            r1.pass = r1.rel_error <= 1e-6;
            auto r2 = make_report("jacobian_p" + tag, an.dfdp.norm(), fd.dfdp.norm(), 1e-6, "rel_eps=1e-06");
            r2.rel_error = relative_error(an.dfdp, fd.dfdp);
            r2.pass = r2.rel_error <= 1e-6;
            rows.push_back(r1);
            rows.push_back(r2);
        }
    }
    if (want("sep_sensitivity")) {
        const Matrix M4 = sep_sensitivity(sys, Phase::PreFault, p, ctx.x_s_pre);
        for (const std::size_t k : rc.active) {
            const double eps = default_fd_step(p[static_cast<Eigen::Index>(k)], rc.tol.fd_rel_step, rc.tol.fd_floor);
            const std::string q = "sep_sensitivity[" + sys.param_names()[k] + "]";
            try {
                const Vector fd = fd_sep_sensitivity(sys, Phase::PreFault, p, ctx.x_s_pre, k, eps);
                const Vector an = M4.col(static_cast<Eigen::Index>(k));
                auto r = make_report(q, an.norm(), fd.norm(), 1e-5, "eps=" + format_number(eps));
                r.rel_error = (an - fd).norm() / std::max(fd.norm(), 1e-12);
                r.pass = r.rel_error <= 1e-5 || (an - fd).norm() <= 1e-9;
                rows.push_back(r);
            } catch (const Error& e) {
                fail_row(q, e);
            }
        }
    }

    std::optional<CriticalResult> crit;
    const bool need_cct = want("trajectory_sensitivity") || want("cct_scan") || want("cct_slope");
    if (need_cct) {
        try {
            crit = compute_cct(sys, p, rc.tol.cct);
        } catch (const Error& e) {
            fail_row("cct", e);
        }
    }
    if (crit && want("trajectory_sensitivity")) {
        struct Leg {
            Phase phase;
            Vector x0;
            double t;
        };
        std::vector<Leg> legs{{Phase::FaultOn, ctx.x_s_pre, crit->t_cr}};
        if (crit->mode != InstabilityMode::Mode1FaultHitsBoundary) legs.push_back({Phase::PostFault, crit->x_cr, crit->T});
        IntegrationOptions io = rc.tol.sens.integration;
        io.sample_stride = 1 << 20;
        for (const auto& leg : legs) {
            if (!(leg.t > 0.0)) continue;
            io.t_max = leg.t;
            const auto run = integrate_with_sensitivities(sys, leg.phase, leg.x0, p, io);
            const Matrix& phx = run.sensitivities.phi_x.back();
            const Matrix& php = run.sensitivities.phi_p.back();
            const std::string tag = std::string("[") + std::string(to_string(leg.phase)) + "]";
            double worst_x = 0.0, worst_p = 0.0, fd_x_norm = 0.0, fd_p_norm = 0.0, an_p_norm = 0.0;
            for (const std::size_t k : rc.active) {
                const auto [fdx, fdp] = fd_trajectory_sensitivity(sys, leg.phase, leg.x0, p, leg.t, k, 1e-6);
                worst_x = std::max(worst_x, relative_error(phx, fdx));
                fd_x_norm = fdx.norm();
                fd_p_norm = std::max(fd_p_norm, fdp.norm());
                an_p_norm = std::max(an_p_norm, php.col(static_cast<Eigen::Index>(k)).norm());
                worst_p = std::max(worst_p, (php.col(static_cast<Eigen::Index>(k)) - fdp).norm() /
                                                std::max(fdp.norm(), 1e-6));
            }
            OracleReport rx = make_report("phi_x" + tag, phx.norm(), fd_x_norm, 1e-3, "eps=1e-06");
            rx.rel_error = worst_x;
            rx.pass = worst_x <= 1e-3;
            OracleReport rp = make_report("phi_p" + tag, an_p_norm, fd_p_norm, 1e-3, "eps=1e-06");
            rp.rel_error = worst_p;
            rp.pass = worst_p <= 1e-3;
            rows.push_back(rx);
            rows.push_back(rp);
        }
    }
    if (crit && want("cct_scan")) {
        const double step = scan_step(rc);
        try {
            const auto scan = scan_cct(sys, p, step, rc.tol.cct, co.jobs);
            const double tol_rel = scan_agreement(rc) / std::max(std::abs(scan.cct), 1e-12);
            auto r = make_report("cct_vs_scan", crit->t_cr, scan.cct, tol_rel, "step=" + format_number(step));
            r.pass = r.pass && scan.monotone;
            rows.push_back(r);
        } catch (const Error& e) {
            fail_row("cct_vs_scan", e);
        }
    }
    if (crit && want("cct_slope")) {
        const auto reports = parallel_map(rc.active.size(), co.jobs, [&](std::size_t i) {
            const std::size_t k = rc.active[i];
            const std::string q = "dtcl/d" + sys.param_names()[k];
            try {
                const auto s = cct_sensitivity(sys, p, *crit, k, rc.tol.sens);
                const auto fd = fd_slope_for(rc, p, k);
                return slope_report(q, s.dtcl_dp, fd, crit->t_cr, p[static_cast<Eigen::Index>(k)], rc.tol.tangency,
                                    rc.tol.fd_floor);
            } catch (const Error& e) {
                OracleReport r;
                r.quantity = q;
                r.analytic = r.oracle = r.rel_error = std::numeric_limits<double>::quiet_NaN();
                r.steps = std::string(e.what());
                return r;
            }
        });
        rows.insert(rows.end(), reports.begin(), reports.end());
    }

    auto os = open_output(co, "validate.csv");
    CsvWriter csv(os, rc.hash, {"quantity", "analytic", "oracle", "rel_error", "steps", "tolerance", "pass"});
    bool all = true;
    for (const auto& r : rows) {
        csv.row({r.quantity, format_number(r.analytic), format_number(r.oracle), format_number(r.rel_error), r.steps,
                 format_number(r.tolerance), r.pass ? "true" : "false"});
        all = all && r.pass;
    }
    return all ? kExitOk : kExitValidation;
}

/// Loads the config, runs one subcommand and maps failures to exit codes.
inline int run_command(const std::string& command, const std::string& config_path, const std::string& tol_overrides,
                       const CommandOptions& co) {
    try {
        const RunConfig rc = load_config_file(config_path, parse_overrides(tol_overrides));
        if (command == "cct") return run_cct(rc, co);
        if (command == "sens") return run_sens(rc, co);
        if (command == "sweep") return run_sweep(rc, co);
        if (command == "sr-grid") return run_sr_grid(rc, co);
        if (command == "validate") return run_validate(rc, co);
        throw Error(ErrorCode::ConfigError, "unknown command '" + command + "'");
    } catch (const Error& e) {
        std::cerr << command << ": " << e.what() << '\n';
        return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitComputation;
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << '\n';
        return kExitComputation;
    }
}

}  // namespace cctsens
