#pragma once

// Small symbolic expression language used for user-defined systems.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?
//   primary := number | name | name '(' expr ')' | '(' expr ')'
//
// Names resolve to state variables, parameters or named constants. Supported
// functions: sin cos tan exp log sqrt tanh.

#include "cctsens/model.hpp"

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cctsens::expr {

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Tan, Exp, Log, Sqrt, Tanh };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    Op op;
    double value = 0.0;  // Const
    int var = -1;        // Var
    NodePtr a, b;
};

inline NodePtr constant(double v) { return std::make_shared<const Node>(Node{Op::Const, v, -1, {}, {}}); }
inline NodePtr variable(int i) { return std::make_shared<const Node>(Node{Op::Var, 0.0, i, {}, {}}); }

inline double eval(const Node& n, const double* vars);

inline bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }

// Constructors fold constants and drop identities so derivative trees stay small.
inline NodePtr make(Op op, NodePtr a, NodePtr b = nullptr) {
    const bool ca = a && a->op == Op::Const;
    const bool cb = b && b->op == Op::Const;
    switch (op) {
        case Op::Neg:
            if (ca) return constant(-a->value);
            if (a->op == Op::Neg) return a->a;
            break;
        case Op::Add:
            if (ca && cb) return constant(a->value + b->value);
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case Op::Sub:
            if (ca && cb) return constant(a->value - b->value);
            if (is_const(b, 0.0)) return a;
            if (is_const(a, 0.0)) return make(Op::Neg, b);
            break;
        case Op::Mul:
            if (ca && cb) return constant(a->value * b->value);
            if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Div:
            if (ca && cb) return constant(a->value / b->value);
            if (is_const(a, 0.0)) return constant(0.0);
            if (is_const(b, 1.0)) return a;
            break;
        case Op::Pow:
            if (ca && cb) return constant(std::pow(a->value, b->value));
            if (is_const(b, 1.0)) return a;
            if (is_const(b, 0.0)) return constant(1.0);
            break;
        default:
            if (ca) return constant(eval(Node{op, 0.0, -1, a, nullptr}, nullptr));
            break;
    }
    return std::make_shared<const Node>(Node{op, 0.0, -1, std::move(a), std::move(b)});
}

inline double eval(const Node& n, const double* vars) {
    switch (n.op) {
        case Op::Const: return n.value;
        case Op::Var: return vars[n.var];
        case Op::Neg: return -eval(*n.a, vars);
        case Op::Add: return eval(*n.a, vars) + eval(*n.b, vars);
        case Op::Sub: return eval(*n.a, vars) - eval(*n.b, vars);
        case Op::Mul: return eval(*n.a, vars) * eval(*n.b, vars);
        case Op::Div: return eval(*n.a, vars) / eval(*n.b, vars);
        case Op::Pow: return std::pow(eval(*n.a, vars), eval(*n.b, vars));
        case Op::Sin: return std::sin(eval(*n.a, vars));
        case Op::Cos: return std::cos(eval(*n.a, vars));
        case Op::Tan: return std::tan(eval(*n.a, vars));
        case Op::Exp: return std::exp(eval(*n.a, vars));
        case Op::Log: return std::log(eval(*n.a, vars));
        case Op::Sqrt: return std::sqrt(eval(*n.a, vars));
        case Op::Tanh: return std::tanh(eval(*n.a, vars));
    }
    return 0.0;
}

/// Symbolic derivative with respect to variable slot `v`.
inline NodePtr diff(const NodePtr& n, int v) {
    const auto d = [v](const NodePtr& x) { return diff(x, v); };
    switch (n->op) {
        case Op::Const: return constant(0.0);
        case Op::Var: return constant(n->var == v ? 1.0 : 0.0);
        case Op::Neg: return make(Op::Neg, d(n->a));
        case Op::Add: return make(Op::Add, d(n->a), d(n->b));
        case Op::Sub: return make(Op::Sub, d(n->a), d(n->b));
        case Op::Mul:
            return make(Op::Add, make(Op::Mul, d(n->a), n->b), make(Op::Mul, n->a, d(n->b)));
        case Op::Div:
            return make(Op::Div,
                        make(Op::Sub, make(Op::Mul, d(n->a), n->b), make(Op::Mul, n->a, d(n->b))),
                        make(Op::Mul, n->b, n->b));
        case Op::Pow: {
            const NodePtr du = d(n->a);
            const NodePtr dv = d(n->b);
            // u^c: c u^(c-1) u'
            const NodePtr power_term =
                make(Op::Mul, make(Op::Mul, n->b, make(Op::Pow, n->a, make(Op::Sub, n->b, constant(1.0)))), du);
            if (is_const(dv, 0.0)) return power_term;
            // + u^v ln(u) v'
            return make(Op::Add, power_term, make(Op::Mul, make(Op::Mul, n, make(Op::Log, n->a)), dv));
        }
        case Op::Sin: return make(Op::Mul, make(Op::Cos, n->a), d(n->a));
        case Op::Cos: return make(Op::Neg, make(Op::Mul, make(Op::Sin, n->a), d(n->a)));
        case Op::Tan: {
            const NodePtr c = make(Op::Cos, n->a);
            return make(Op::Div, d(n->a), make(Op::Mul, c, c));
        }
        case Op::Exp: return make(Op::Mul, n, d(n->a));
        case Op::Log: return make(Op::Div, d(n->a), n->a);
        case Op::Sqrt: return make(Op::Div, d(n->a), make(Op::Mul, constant(2.0), n));
        case Op::Tanh:
            return make(Op::Mul, make(Op::Sub, constant(1.0), make(Op::Mul, n, n)), d(n->a));
    }
    return constant(0.0);
}

/// Name table: each resolvable identifier maps either to a variable slot or to
/// a fixed constant value.
struct Symbols {
    std::map<std::string, int> slots;
    std::map<std::string, double> constants;
};

class Parser {
public:
    Parser(std::string_view src, const Symbols& symbols) : src_(src), sym_(symbols) {}

    NodePtr parse() {
        NodePtr n = parse_expr();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(ErrorCode::ConfigError,
                    "expression '" + std::string(src_) + "' at offset " + std::to_string(pos_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            if (accept('+')) lhs = make(Op::Add, lhs, parse_term());
            else if (accept('-')) lhs = make(Op::Sub, lhs, parse_term());
            else return lhs;
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (accept('*')) lhs = make(Op::Mul, lhs, parse_unary());
            else if (accept('/')) lhs = make(Op::Div, lhs, parse_unary());
            else return lhs;
        }
    }

    NodePtr parse_unary() {
        if (accept('-')) return make(Op::Neg, parse_unary());
        if (accept('+')) return parse_unary();
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (accept('^')) return make(Op::Pow, base, parse_unary());
        return base;
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        const char c = src_[pos_];
        if (accept('(')) {
            NodePtr inner = parse_expr();
            if (!accept(')')) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const std::string rest(src_.substr(pos_));
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(rest, &used);
            } catch (const std::exception&) {
                fail("malformed number");
            }
            pos_ += used;
            return constant(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            const std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                ++pos_;
            const std::string name(src_.substr(start, pos_ - start));
            if (accept('(')) {
                static const std::map<std::string, Op> funcs{
                    {"sin", Op::Sin}, {"cos", Op::Cos},   {"tan", Op::Tan},  {"exp", Op::Exp},
                    {"log", Op::Log}, {"sqrt", Op::Sqrt}, {"tanh", Op::Tanh}};
                const auto it = funcs.find(name);
                if (it == funcs.end()) fail("unknown function '" + name + "'");
                NodePtr arg = parse_expr();
                if (!accept(')')) fail("expected ')' after function argument");
                return make(it->second, arg);
            }
            if (auto it = sym_.slots.find(name); it != sym_.slots.end()) return variable(it->second);
            if (auto it = sym_.constants.find(name); it != sym_.constants.end()) return constant(it->second);
            if (name == "pi") return constant(M_PI);
            fail("unknown identifier '" + name + "'");
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    std::string_view src_;
    const Symbols& sym_;
    std::size_t pos_ = 0;
};

inline NodePtr parse(std::string_view src, const Symbols& symbols) { return Parser(src, symbols).parse(); }

/// Declarative description of one phase: one expression per state derivative
/// and a named expression per constraint.
struct PhaseSpec {
    std::vector<std::string> f;
    std::vector<std::pair<std::string, std::string>> constraints;
};

struct SystemSpec {
    std::vector<std::string> states;
    std::vector<std::string> params;
    std::map<std::string, double> constants;
    PhaseSpec pre, fault, post;
};

namespace detail {

// Packs (x, p) into one contiguous slot array: states first, then parameters.
inline std::vector<double> pack(const Vector& x, const Vector& p) {
    std::vector<double> v(static_cast<std::size_t>(x.size() + p.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) v[static_cast<std::size_t>(i)] = x[i];
    for (Eigen::Index i = 0; i < p.size(); ++i) v[static_cast<std::size_t>(x.size() + i)] = p[i];
    return v;
}

inline PhaseDefinition build_phase(const PhaseSpec& spec, const Symbols& sym, int n, int np,
                                   const std::string& label) {
    if (static_cast<int>(spec.f.size()) != n)
        throw Error(ErrorCode::ConfigError, "phase '" + label + "' needs " + std::to_string(n) +
                                                " vector-field expressions, got " +
                                                std::to_string(spec.f.size()));
    std::vector<NodePtr> f;
    for (const auto& s : spec.f) f.push_back(parse(s, sym));
    std::vector<std::vector<NodePtr>> jx(static_cast<std::size_t>(n)), jp(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) jx[static_cast<std::size_t>(i)].push_back(diff(f[static_cast<std::size_t>(i)], j));
        for (int k = 0; k < np; ++k) jp[static_cast<std::size_t>(i)].push_back(diff(f[static_cast<std::size_t>(i)], n + k));
    }

    PhaseDefinition def;
    def.dynamics.f = [f, n](const Vector& x, const Vector& p) {
        const auto v = pack(x, p);
        Vector out(n);
        for (int i = 0; i < n; ++i) out[i] = eval(*f[static_cast<std::size_t>(i)], v.data());
        return out;
    };
    def.dynamics.dfdx = [jx, n](const Vector& x, const Vector& p) {
        const auto v = pack(x, p);
        Matrix out(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out(i, j) = eval(*jx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], v.data());
        return out;
    };
    def.dynamics.dfdp = [jp, n, np](const Vector& x, const Vector& p) {
        const auto v = pack(x, p);
        Matrix out(n, np);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < np; ++k) out(i, k) = eval(*jp[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], v.data());
        return out;
    };

    for (const auto& [name, text] : spec.constraints) {
        const NodePtr h = parse(text, sym);
        std::vector<NodePtr> g;  // gradient over all n + np slots
        for (int j = 0; j < n + np; ++j) g.push_back(diff(h, j));
        std::vector<std::vector<NodePtr>> hess(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n + np; ++j) hess[static_cast<std::size_t>(i)].push_back(diff(g[static_cast<std::size_t>(i)], j));

        Constraint c;
        c.name = name;
        c.value = [h](const Vector& x, const Vector& p) { return eval(*h, pack(x, p).data()); };
        c.grad_x = [g, n](const Vector& x, const Vector& p) {
            const auto v = pack(x, p);
            Vector out(n);
            for (int j = 0; j < n; ++j) out[j] = eval(*g[static_cast<std::size_t>(j)], v.data());
            return out;
        };
        c.grad_p = [g, n, np](const Vector& x, const Vector& p) {
            const auto v = pack(x, p);
            Vector out(np);
            for (int k = 0; k < np; ++k) out[k] = eval(*g[static_cast<std::size_t>(n + k)], v.data());
            return out;
        };
        c.hess_xx = [hess, n](const Vector& x, const Vector& p) {
            const auto v = pack(x, p);
            Matrix out(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) out(i, j) = eval(*hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], v.data());
            return out;
        };
        c.hess_xp = [hess, n, np](const Vector& x, const Vector& p) {
            const auto v = pack(x, p);
            Matrix out(n, np);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < np; ++k) out(i, k) = eval(*hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + k)], v.data());
            return out;
        };
        def.constraints.push_back(std::move(c));
    }
    return def;
}

}  // namespace detail

inline ConstrainedSystem make_system(const SystemSpec& spec) {
    const int n = static_cast<int>(spec.states.size());
    const int np = static_cast<int>(spec.params.size());
    if (n < 1) throw Error(ErrorCode::ConfigError, "expression system needs at least one state");
    Symbols sym;
    for (int i = 0; i < n; ++i)
        if (!sym.slots.emplace(spec.states[static_cast<std::size_t>(i)], i).second)
            throw Error(ErrorCode::ConfigError, "duplicate state name '" + spec.states[static_cast<std::size_t>(i)] + "'");
    for (int k = 0; k < np; ++k)
        if (!sym.slots.emplace(spec.params[static_cast<std::size_t>(k)], n + k).second)
            throw Error(ErrorCode::ConfigError, "name '" + spec.params[static_cast<std::size_t>(k)] + "' is declared twice");
    sym.constants = spec.constants;
    return ConstrainedSystem(static_cast<std::size_t>(n), spec.params,
                             detail::build_phase(spec.pre, sym, n, np, "pre"),
                             detail::build_phase(spec.fault, sym, n, np, "fault"),
                             detail::build_phase(spec.post, sym, n, np, "post"));
}

}  // namespace cctsens::expr
