#pragma once

// JSON run configuration for the command-line front end. Requires
// nlohmann/json on the include path; the numerical headers do not.

#include "cctsens/boundary.hpp"
#include "cctsens/cct.hpp"
#include "cctsens/expr.hpp"
#include "cctsens/sensitivity.hpp"
#include "cctsens/smib.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cctsens {

using Json = nlohmann::json;

struct SweepSpec {
    std::size_t parameter = 0;
    double from = 0.0;
    double to = 0.0;
    int count = 0;
    bool tangents = true;

    [[nodiscard]] double value(int i) const {
        if (count == 1) return from;
        return (from * static_cast<double>(count - 1 - i) + to * static_cast<double>(i)) / static_cast<double>(count - 1);
    }
};

/// Every numeric knob a run can override, grouped by consumer.
struct Tolerances {
    CctOptions cct;
    SensitivityOptions sens;
    double fd_rel_step = 1e-4;
    double fd_floor = 1e-6;
    double tangency = 0.05;        // relative analytic-vs-FD slope bound
    double scan_step_factor = 0.1;  // scan step = factor * bisection_tol
    double sr_divergence_radius = 50.0;
};

struct RunConfig {
    Json effective;  // parsed document with overrides applied; hashed
    std::string hash;
    std::string kind;
    std::optional<ConstrainedSystem> system;
    Vector p0;
    std::vector<std::size_t> active;
    std::optional<SweepSpec> sweep;
    std::optional<GridSpec> grid;
    Tolerances tol;
    std::vector<std::string> validate_quantities;

    [[nodiscard]] const ConstrainedSystem& sys() const { return *system; }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

inline void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) config_error("'" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
        if (!ok.count(k)) config_error("unknown key '" + k + "' in '" + where + "'");
}

inline double number(const Json& obj, const char* key, double fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const Json& v = obj.at(key);
    if (!v.is_number()) config_error("'" + where + "." + key + "' must be a number");
    return v.get<double>();
}

inline std::string text(const Json& v, const std::string& where) {
    if (!v.is_string()) config_error("'" + where + "' must be a string");
    return v.get<std::string>();
}

inline std::vector<std::string> strings(const Json& v, const std::string& where) {
    if (!v.is_array()) config_error("'" + where + "' must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) out.push_back(text(e, where));
    return out;
}

inline std::size_t resolve_param(const ConstrainedSystem& sys, const std::string& name) {
    const auto k = sys.param_index(name);
    if (!k) {
        std::string known;
        for (const auto& s : sys.param_names()) known += (known.empty() ? "" : ", ") + s;
        config_error("unknown parameter '" + name + "' (declared: " + known + ")");
    }
    return *k;
}

inline void load_smib(const Json& s, RunConfig& rc) {
    check_keys(s, "system", {"kind", "Pm", "M", "D", "ev_over_x", "delta_max", "omega_max"});
    smib::SmibParams sp;
    sp.Pm = number(s, "Pm", sp.Pm, "system");
    sp.M = number(s, "M", sp.M, "system");
    sp.D = number(s, "D", sp.D, "system");
    sp.delta_max = number(s, "delta_max", sp.delta_max, "system");
    sp.omega_max = number(s, "omega_max", sp.omega_max, "system");
    if (s.contains("ev_over_x")) {
        const Json& e = s.at("ev_over_x");
        check_keys(e, "system.ev_over_x", {"pre", "fault", "post"});
        sp.ev_over_x_pre = number(e, "pre", sp.ev_over_x_pre, "system.ev_over_x");
        sp.ev_over_x_fault = number(e, "fault", sp.ev_over_x_fault, "system.ev_over_x");
        sp.ev_over_x_post = number(e, "post", sp.ev_over_x_post, "system.ev_over_x");
    }
    try {
        rc.system.emplace(smib::make_system(sp));
    } catch (const Error& e) {
        config_error(e.what());
    }
    rc.p0 = sp.parameter_vector();
}

inline expr::PhaseSpec load_phase(const Json& ph, const std::string& where) {
    check_keys(ph, where, {"f", "constraints"});
    if (!ph.contains("f")) config_error("'" + where + ".f' is required");
    expr::PhaseSpec out;
    out.f = strings(ph.at("f"), where + ".f");
    if (ph.contains("constraints")) {
        const Json& cs = ph.at("constraints");
        if (!cs.is_array()) config_error("'" + where + ".constraints' must be an array");
        for (const auto& c : cs) {
            check_keys(c, where + ".constraints[]", {"name", "expr"});
            if (!c.contains("name") || !c.contains("expr"))
                config_error("each constraint in '" + where + "' needs 'name' and 'expr'");
            out.constraints.emplace_back(text(c.at("name"), where + ".constraints[].name"),
                                         text(c.at("expr"), where + ".constraints[].expr"));
        }
    }
    return out;
}

inline void load_expr(const Json& s, RunConfig& rc) {
    check_keys(s, "system", {"kind", "states", "params", "constants", "phases"});
    for (const char* key : {"states", "params", "phases"})
        if (!s.contains(key)) config_error(std::string("'system.") + key + "' is required");
    expr::SystemSpec spec;
    spec.states = strings(s.at("states"), "system.states");
    const Json& params = s.at("params");
    if (!params.is_array()) config_error("'system.params' must be an array of {name, value}");
    std::vector<double> values;
    for (const auto& e : params) {
        check_keys(e, "system.params[]", {"name", "value"});
        if (!e.contains("name") || !e.contains("value") || !e.at("value").is_number())
            config_error("each entry of 'system.params' needs a 'name' and a numeric 'value'");
        spec.params.push_back(text(e.at("name"), "system.params[].name"));
        values.push_back(e.at("value").get<double>());
    }
    if (s.contains("constants")) {
        const Json& c = s.at("constants");
        if (!c.is_object()) config_error("'system.constants' must be an object");
        for (const auto& [k, v] : c.items()) {
            if (!v.is_number()) config_error("constant '" + k + "' must be a number");
            spec.constants[k] = v.get<double>();
        }
    }
    const Json& phases = s.at("phases");
    check_keys(phases, "system.phases", {"pre", "fault", "post"});
    for (const char* key : {"pre", "fault", "post"})
        if (!phases.contains(key)) config_error(std::string("'system.phases.") + key + "' is required");
    spec.pre = load_phase(phases.at("pre"), "system.phases.pre");
    spec.fault = load_phase(phases.at("fault"), "system.phases.fault");
    spec.post = load_phase(phases.at("post"), "system.phases.post");
    try {
        rc.system.emplace(expr::make_system(spec));
    } catch (const Error& e) {
        config_error(e.what());
    }
    rc.p0 = Vector::Map(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline void load_tolerances(const Json& t, Tolerances& tol) {
    check_keys(t, "tolerances",
               {"bisection_tol", "boundary_touch_tol", "field_min_tol", "sep_tol", "boundary_tol",
                "divergence_radius", "max_iterations", "t_max", "rel_tol", "abs_tol", "max_step",
                "event_refine_tol", "sens_rel_tol", "sens_abs_tol", "transversality_tol", "degeneracy_tol",
                "semi_saddle_check", "proximity_margin", "fd_rel_step", "fd_floor", "tangency",
                "scan_step_factor", "sr_divergence_radius"});
    const std::string w = "tolerances";
    auto& c = tol.cct;
    c.bisection_tol = number(t, "bisection_tol", c.bisection_tol, w);
    c.boundary_touch_tol = number(t, "boundary_touch_tol", c.boundary_touch_tol, w);
    c.field_min_tol = number(t, "field_min_tol", c.field_min_tol, w);
    c.sep_tol = number(t, "sep_tol", c.sep_tol, w);
    c.boundary_tol = number(t, "boundary_tol", c.boundary_tol, w);
    c.divergence_radius = number(t, "divergence_radius", c.divergence_radius, w);
    c.max_iterations = static_cast<int>(number(t, "max_iterations", c.max_iterations, w));
    c.integration.t_max = number(t, "t_max", c.integration.t_max, w);
    c.integration.rel_tol = number(t, "rel_tol", c.integration.rel_tol, w);
    c.integration.abs_tol = number(t, "abs_tol", c.integration.abs_tol, w);
    c.integration.max_step = number(t, "max_step", c.integration.max_step, w);
    c.integration.event_refine_tol = number(t, "event_refine_tol", c.integration.event_refine_tol, w);
    auto& s = tol.sens;
    s.integration.rel_tol = number(t, "sens_rel_tol", s.integration.rel_tol, w);
    s.integration.abs_tol = number(t, "sens_abs_tol", s.integration.abs_tol, w);
    s.integration.max_step = c.integration.max_step;
    s.transversality_tol = number(t, "transversality_tol", s.transversality_tol, w);
    s.degeneracy_tol = number(t, "degeneracy_tol", s.degeneracy_tol, w);
    s.semi_saddle_check = number(t, "semi_saddle_check", s.semi_saddle_check, w);
    s.proximity_margin = number(t, "proximity_margin", s.proximity_margin, w);
    tol.fd_rel_step = number(t, "fd_rel_step", tol.fd_rel_step, w);
    tol.fd_floor = number(t, "fd_floor", tol.fd_floor, w);
    tol.tangency = number(t, "tangency", tol.tangency, w);
    tol.scan_step_factor = number(t, "scan_step_factor", tol.scan_step_factor, w);
    tol.sr_divergence_radius = number(t, "sr_divergence_radius", tol.sr_divergence_radius, w);

    for (const double v : {c.bisection_tol, c.boundary_touch_tol, c.field_min_tol, c.sep_tol, c.boundary_tol,
                           c.divergence_radius, c.integration.t_max, c.integration.rel_tol, c.integration.abs_tol,
                           c.integration.max_step, c.integration.event_refine_tol, s.integration.rel_tol,
                           s.integration.abs_tol, tol.fd_rel_step, tol.fd_floor, tol.tangency,
                           tol.scan_step_factor, tol.sr_divergence_radius})
        if (!(v > 0.0) || !std::isfinite(v)) config_error("every tolerance must be a positive finite number");
    if (c.max_iterations < 1) config_error("'tolerances.max_iterations' must be at least 1");
}

}  // namespace detail

/// FNV-1a, 64 bit, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Parses "key=value,key=value" into tolerance overrides.
inline std::map<std::string, double> parse_overrides(std::string_view spec) {
    std::map<std::string, double> out;
    std::string item;
    std::stringstream ss{std::string(spec)};
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            detail::config_error("tolerance override '" + item + "' is not of the form key=value");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(val, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != val.size())
            detail::config_error("tolerance override '" + key + "' has a non-numeric value '" + val + "'");
        out[key] = v;
    }
    return out;
}

inline RunConfig load_config(Json doc, const std::map<std::string, double>& overrides = {}) {
    using namespace detail;
    check_keys(doc, "config", {"system", "parameters", "sweep", "grid", "tolerances", "sep_guess", "validate"});
    if (!overrides.empty()) {
        Json& t = doc["tolerances"];
        if (t.is_null()) t = Json::object();
        for (const auto& [k, v] : overrides) t[k] = v;
    }

    RunConfig rc;
    if (!doc.contains("system")) config_error("'system' is required");
    const Json& s = doc.at("system");
    if (!s.is_object() || !s.contains("kind")) config_error("'system.kind' is required");
    rc.kind = text(s.at("kind"), "system.kind");
    if (rc.kind == "smib") load_smib(s, rc);
    else if (rc.kind == "expr") load_expr(s, rc);
    else config_error("unknown system kind '" + rc.kind + "' (expected \"smib\" or \"expr\")");
    const ConstrainedSystem& sys = *rc.system;

    if (doc.contains("parameters")) {
        for (const auto& name : strings(doc.at("parameters"), "parameters"))
            rc.active.push_back(resolve_param(sys, name));
    } else {
        for (std::size_t k = 0; k < sys.np(); ++k) rc.active.push_back(k);
    }

    if (doc.contains("tolerances")) load_tolerances(doc.at("tolerances"), rc.tol);

    if (doc.contains("sep_guess")) {
        const Json& g = doc.at("sep_guess");
        if (!g.is_array() || g.size() != sys.n()) config_error("'sep_guess' must list one number per state");
        Vector v(static_cast<Eigen::Index>(sys.n()));
        for (std::size_t i = 0; i < sys.n(); ++i) {
            if (!g[i].is_number()) config_error("'sep_guess' entries must be numbers");
            v[static_cast<Eigen::Index>(i)] = g[i].get<double>();
        }
        rc.tol.cct.sep_guess = v;
    }

    if (doc.contains("sweep")) {
        const Json& w = doc.at("sweep");
        check_keys(w, "sweep", {"parameter", "from", "to", "count", "tangents"});
        if (!w.contains("parameter")) config_error("'sweep.parameter' is required");
        SweepSpec sw;
        sw.parameter = resolve_param(sys, text(w.at("parameter"), "sweep.parameter"));
        sw.from = number(w, "from", 0.0, "sweep");
        sw.to = number(w, "to", sw.from, "sweep");
        const double count = number(w, "count", 0.0, "sweep");
        if (count < 0 || count != std::floor(count)) config_error("'sweep.count' must be a non-negative integer");
        sw.count = static_cast<int>(count);
        if (w.contains("tangents")) {
            if (!w.at("tangents").is_boolean()) config_error("'sweep.tangents' must be a boolean");
            sw.tangents = w.at("tangents").get<bool>();
        }
        rc.sweep = sw;
    }

    if (doc.contains("grid")) {
        const Json& g = doc.at("grid");
        check_keys(g, "grid", {"x1", "x2"});
        GridSpec gs;
        const auto axis = [&](const char* key, double& lo, double& hi, int& n) {
            if (!g.contains(key)) config_error(std::string("'grid.") + key + "' is required");
            const Json& a = g.at(key);
            if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number())
                config_error(std::string("'grid.") + key + "' must be [min, max, cells]");
            lo = a[0].get<double>();
            hi = a[1].get<double>();
            const double cells = a[2].get<double>();
            if (!(hi > lo) || cells < 1 || cells != std::floor(cells))
                config_error(std::string("'grid.") + key + "' needs max > min and a positive integer cell count");
            n = static_cast<int>(cells);
        };
        axis("x1", gs.x1_min, gs.x1_max, gs.n1);
        axis("x2", gs.x2_min, gs.x2_max, gs.n2);
        rc.grid = gs;
    }

    if (doc.contains("validate")) {
        const Json& v = doc.at("validate");
        check_keys(v, "validate", {"quantities"});
        if (v.contains("quantities")) rc.validate_quantities = strings(v.at("quantities"), "validate.quantities");
    }

    rc.hash = fnv1a_hex(doc.dump());
    rc.effective = std::move(doc);
    return rc;
}

inline RunConfig load_config_file(const std::string& path, const std::map<std::string, double>& overrides = {}) {
    std::ifstream in(path);
    if (!in) detail::config_error("cannot open config file '" + path + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        detail::config_error("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return load_config(std::move(doc), overrides);
}

}  // namespace cctsens
