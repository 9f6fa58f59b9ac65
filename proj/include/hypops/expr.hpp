#pragma once

// Expression and guard trees shared by the whole toolkit: arithmetic over
// model variables, named parameters, the size symbol and simulation time.
// Values are immutable after construction and safe to share across workers.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hypops/errors.hpp"

namespace hypops {

enum class ExprOp {
    Const,
    Var,       // model variable reference
    Param,     // named constant
    SizeN,     // reserved size symbol
    Time,      // reserved simulation-time symbol
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Min,       // n-ary
    Max,       // n-ary
    Indicator, // 1 if guard holds, else 0
    Floor,
    Abs,
};

struct Guard;

struct Expr {
    ExprOp op = ExprOp::Const;
    double value = 0.0;              // Const
    std::string name;                // Var / Param
    int slot = -1;                   // resolved index (Var: variable slot, Param: param slot)
    std::vector<Expr> args;
    std::shared_ptr<const Guard> guard; // Indicator

    Expr() = default;
};

struct GuardAtom {
    Expr lhs;
    bool strict = false; // lhs > 0 instead of lhs >= 0
};

// Positive boolean combinations only; negation is resolved at parse time.
struct Guard {
    enum class Kind { True, Atom, And, Or };
    Kind kind = Kind::True;
    GuardAtom atom;
    std::vector<Guard> children;
};

// ---------------------------------------------------------------------------
// Builders

inline Expr constant(double v) {
    Expr e;
    e.op = ExprOp::Const;
    e.value = v;
    return e;
}

inline Expr var_ref(std::string name) {
    Expr e;
    e.op = ExprOp::Var;
    e.name = std::move(name);
    return e;
}

inline Expr param_ref(std::string name) {
    Expr e;
    e.op = ExprOp::Param;
    e.name = std::move(name);
    return e;
}

inline Expr size_symbol() {
    Expr e;
    e.op = ExprOp::SizeN;
    return e;
}

inline Expr time_symbol() {
    Expr e;
    e.op = ExprOp::Time;
    return e;
}

inline Expr unary(ExprOp op, Expr a) {
    Expr e;
    e.op = op;
    e.args.push_back(std::move(a));
    return e;
}

inline Expr binary(ExprOp op, Expr a, Expr b) {
    Expr e;
    e.op = op;
    e.args.push_back(std::move(a));
    e.args.push_back(std::move(b));
    return e;
}

inline Expr neg(Expr a) { return unary(ExprOp::Neg, std::move(a)); }
inline Expr add(Expr a, Expr b) { return binary(ExprOp::Add, std::move(a), std::move(b)); }
inline Expr sub(Expr a, Expr b) { return binary(ExprOp::Sub, std::move(a), std::move(b)); }
inline Expr mul(Expr a, Expr b) { return binary(ExprOp::Mul, std::move(a), std::move(b)); }
inline Expr divide(Expr a, Expr b) { return binary(ExprOp::Div, std::move(a), std::move(b)); }
inline Expr floor_of(Expr a) { return unary(ExprOp::Floor, std::move(a)); }
inline Expr abs_of(Expr a) { return unary(ExprOp::Abs, std::move(a)); }

inline Expr nary(ExprOp op, std::vector<Expr> args) {
    Expr e;
    e.op = op;
    e.args = std::move(args);
    return e;
}

inline Expr min_of(std::vector<Expr> args) { return nary(ExprOp::Min, std::move(args)); }
inline Expr max_of(std::vector<Expr> args) { return nary(ExprOp::Max, std::move(args)); }

inline Expr indicator(Guard g) {
    Expr e;
    e.op = ExprOp::Indicator;
    e.guard = std::make_shared<const Guard>(std::move(g));
    return e;
}

inline Guard guard_true() { return Guard{}; }

inline Guard guard_atom(Expr lhs, bool strict = false) {
    Guard g;
    g.kind = Guard::Kind::Atom;
    g.atom.lhs = std::move(lhs);
    g.atom.strict = strict;
    return g;
}

inline Guard guard_and(std::vector<Guard> gs) {
    Guard g;
    g.kind = Guard::Kind::And;
    g.children = std::move(gs);
    return g;
}

inline Guard guard_or(std::vector<Guard> gs) {
    Guard g;
    g.kind = Guard::Kind::Or;
    g.children = std::move(gs);
    return g;
}

// ---------------------------------------------------------------------------
// Environment for the reference evaluator. Lookups of undeclared names are
// errors, never defaults.

struct Env {
    std::map<std::string, double> values;
    double time = 0.0;
    std::optional<double> size_n;

    double lookup(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end())
            throw UnboundVariable("unbound name '" + name + "'");
        return it->second;
    }
};

bool eval_guard(const Guard& g, const Env& env);

inline double eval_expr(const Expr& e, const Env& env) {
    switch (e.op) {
    case ExprOp::Const: return e.value;
    case ExprOp::Var:
    case ExprOp::Param: return env.lookup(e.name);
    case ExprOp::SizeN:
        if (!env.size_n)
            throw SizeSymbolInLimitMode("size symbol referenced with no size bound");
        return *env.size_n;
    case ExprOp::Time: return env.time;
    case ExprOp::Neg: return -eval_expr(e.args[0], env);
    case ExprOp::Add: return eval_expr(e.args[0], env) + eval_expr(e.args[1], env);
    case ExprOp::Sub: return eval_expr(e.args[0], env) - eval_expr(e.args[1], env);
    case ExprOp::Mul: return eval_expr(e.args[0], env) * eval_expr(e.args[1], env);
    case ExprOp::Div: {
        double d = eval_expr(e.args[1], env);
        if (d == 0.0)
            throw DivisionByZero("division by zero");
        return eval_expr(e.args[0], env) / d;
    }
    case ExprOp::Min: {
        double m = eval_expr(e.args[0], env);
        for (std::size_t i = 1; i < e.args.size(); ++i)
            m = std::min(m, eval_expr(e.args[i], env));
        return m;
    }
    case ExprOp::Max: {
        double m = eval_expr(e.args[0], env);
        for (std::size_t i = 1; i < e.args.size(); ++i)
            m = std::max(m, eval_expr(e.args[i], env));
        return m;
    }
    case ExprOp::Indicator: return eval_guard(*e.guard, env) ? 1.0 : 0.0;
    case ExprOp::Floor: return std::floor(eval_expr(e.args[0], env));
    case ExprOp::Abs: return std::fabs(eval_expr(e.args[0], env));
    }
    throw Error("corrupt expression node");
}

inline bool eval_guard(const Guard& g, const Env& env) {
    switch (g.kind) {
    case Guard::Kind::True: return true;
    case Guard::Kind::Atom: {
        double v = eval_expr(g.atom.lhs, env);
        return g.atom.strict ? (v > 0.0) : (v >= 0.0);
    }
    case Guard::Kind::And:
        for (const auto& c : g.children)
            if (!eval_guard(c, env)) return false;
        return true;
    case Guard::Kind::Or:
        for (const auto& c : g.children)
            if (eval_guard(c, env)) return true;
        return false;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Activation function of a guard: a continuous expression h with
// h >= 0 iff the guard holds (strict atoms share the same h; the distinction
// only matters on the measure-zero set where an atom is exactly 0).
// Conjunction maps to min, disjunction to max. A guard that is identically
// true has no surface, which is reported as GuardIsConstantTrue.

inline std::optional<Expr> try_activation_function(const Guard& g) {
    switch (g.kind) {
    case Guard::Kind::True: return std::nullopt;
    case Guard::Kind::Atom: return g.atom.lhs;
    case Guard::Kind::And: {
        std::vector<Expr> hs;
        for (const auto& c : g.children) {
            auto h = try_activation_function(c);
            if (h) hs.push_back(std::move(*h)); // "true" conjuncts impose nothing
        }
        if (hs.empty()) return std::nullopt;
        if (hs.size() == 1) return hs[0];
        return min_of(std::move(hs));
    }
    case Guard::Kind::Or: {
        std::vector<Expr> hs;
        for (const auto& c : g.children) {
            auto h = try_activation_function(c);
            if (!h) return std::nullopt; // a true branch makes the whole guard true
            hs.push_back(std::move(*h));
        }
        if (hs.size() == 1) return hs[0];
        return max_of(std::move(hs));
    }
    }
    return std::nullopt;
}

inline Expr activation_function(const Guard& g) {
    auto h = try_activation_function(g);
    if (!h)
        throw GuardIsConstantTrue("guard has no activation surface (always active)");
    return *h;
}

// Combined activation over several transitions: active iff some member is.
inline Expr combine_activations(std::vector<Expr> hs) {
    if (hs.empty())
        throw GuardIsConstantTrue("no activation functions to combine");
    if (hs.size() == 1) return hs[0];
    return max_of(std::move(hs));
}

// ---------------------------------------------------------------------------
// Tree inspection helpers

template <class Fn>
inline void visit_exprs(const Expr& e, Fn&& fn);

template <class Fn>
inline void visit_guard_exprs(const Guard& g, Fn&& fn) {
    if (g.kind == Guard::Kind::Atom) {
        visit_exprs(g.atom.lhs, fn);
        return;
    }
    for (const auto& c : g.children)
        visit_guard_exprs(c, fn);
}

template <class Fn>
inline void visit_exprs(const Expr& e, Fn&& fn) {
    fn(e);
    for (const auto& a : e.args)
        visit_exprs(a, fn);
    if (e.op == ExprOp::Indicator && e.guard)
        visit_guard_exprs(*e.guard, fn);
}

inline bool contains_size_symbol(const Expr& e) {
    bool found = false;
    visit_exprs(e, [&](const Expr& n) { found = found || n.op == ExprOp::SizeN; });
    return found;
}

inline bool contains_time(const Expr& e) {
    bool found = false;
    visit_exprs(e, [&](const Expr& n) { found = found || n.op == ExprOp::Time; });
    return found;
}

inline bool contains_var(const Expr& e) {
    bool found = false;
    visit_exprs(e, [&](const Expr& n) { found = found || n.op == ExprOp::Var; });
    return found;
}

template <class Pred>
inline bool contains_var_if(const Expr& e, Pred&& pred) {
    bool found = false;
    visit_exprs(e, [&](const Expr& n) {
        if (n.op == ExprOp::Var && pred(n.name)) found = true;
    });
    return found;
}

// ---------------------------------------------------------------------------
// Structural equality (names compared, slots ignored)

inline bool structurally_equal(const Expr& a, const Expr& b);

inline bool structurally_equal(const Guard& a, const Guard& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == Guard::Kind::Atom)
        return a.atom.strict == b.atom.strict && structurally_equal(a.atom.lhs, b.atom.lhs);
    if (a.children.size() != b.children.size()) return false;
    for (std::size_t i = 0; i < a.children.size(); ++i)
        if (!structurally_equal(a.children[i], b.children[i])) return false;
    return true;
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.op != b.op) return false;
    switch (a.op) {
    case ExprOp::Const:
        return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    case ExprOp::Var:
    case ExprOp::Param:
        return a.name == b.name;
    case ExprOp::Indicator:
        return structurally_equal(*a.guard, *b.guard);
    default: break;
    }
    if (a.args.size() != b.args.size()) return false;
    for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!structurally_equal(a.args[i], b.args[i])) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Printing. Output is canonical and reparses to a structurally equal tree.

inline std::string to_string(const Guard& g);

namespace detail {

inline int precedence(ExprOp op) {
    switch (op) {
    case ExprOp::Add:
    case ExprOp::Sub: return 1;
    case ExprOp::Mul:
    case ExprOp::Div: return 2;
    case ExprOp::Neg: return 3;
    default: return 4;
    }
}

inline std::string format_double(double v) {
    char buf[64];
    // shortest representation that round-trips
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline void print_expr(const Expr& e, std::string& out, int parent_prec) {
    int prec = precedence(e.op);
    auto wrap = [&](auto&& body) {
        bool need = prec < parent_prec;
        if (need) out += '(';
        body();
        if (need) out += ')';
    };
    switch (e.op) {
    case ExprOp::Const: out += format_double(e.value); return;
    case ExprOp::Var:
    case ExprOp::Param: out += e.name; return;
    case ExprOp::SizeN: out += 'N'; return;
    case ExprOp::Time: out += "time"; return;
    case ExprOp::Neg:
        wrap([&] {
            out += '-';
            print_expr(e.args[0], out, prec + 1);
        });
        return;
    case ExprOp::Add:
    case ExprOp::Sub:
    case ExprOp::Mul:
    case ExprOp::Div:
        wrap([&] {
            print_expr(e.args[0], out, prec);
            out += e.op == ExprOp::Add ? " + " : e.op == ExprOp::Sub ? " - " : e.op == ExprOp::Mul ? " * " : " / ";
            print_expr(e.args[1], out, prec + 1);
        });
        return;
    case ExprOp::Min:
    case ExprOp::Max:
    case ExprOp::Floor:
    case ExprOp::Abs:
    case ExprOp::Indicator: {
        out += e.op == ExprOp::Min   ? "min"
             : e.op == ExprOp::Max   ? "max"
             : e.op == ExprOp::Floor ? "floor"
             : e.op == ExprOp::Abs   ? "abs"
                                     : "ind";
        out += '(';
        if (e.op == ExprOp::Indicator) {
            out += to_string(*e.guard);
        } else {
            for (std::size_t i = 0; i < e.args.size(); ++i) {
                if (i) out += ", ";
                print_expr(e.args[i], out, 0);
            }
        }
        out += ')';
        return;
    }
    }
}

} // namespace detail

inline std::string to_string(const Expr& e) {
    std::string out;
    detail::print_expr(e, out, 0);
    return out;
}

inline std::string to_string(const Guard& g) {
    switch (g.kind) {
    case Guard::Kind::True: return "true";
    case Guard::Kind::Atom:
        return to_string(g.atom.lhs) + (g.atom.strict ? " > 0" : " >= 0");
    case Guard::Kind::And:
    case Guard::Kind::Or: {
        std::string sep = g.kind == Guard::Kind::And ? " && " : " || ";
        std::string out;
        for (std::size_t i = 0; i < g.children.size(); ++i) {
            if (i) out += sep;
            const Guard& c = g.children[i];
            bool need = c.kind == Guard::Kind::And || c.kind == Guard::Kind::Or;
            if (need) out += '(';
            out += to_string(c);
            if (need) out += ')';
        }
        return out;
    }
    }
    return "true";
}

// ---------------------------------------------------------------------------
// Constant folding and light algebraic cleanup (used when deriving
// normalized programs; parsed programs are kept verbatim).

inline Expr fold_constants(const Expr& e) {
    Expr r = e;
    for (auto& a : r.args)
        a = fold_constants(a);
    auto is_const = [](const Expr& x, double v) { return x.op == ExprOp::Const && x.value == v; };
    auto all_const = [&]() {
        for (const auto& a : r.args)
            if (a.op != ExprOp::Const) return false;
        return true;
    };
    switch (r.op) {
    case ExprOp::Neg:
        if (r.args[0].op == ExprOp::Const) return constant(-r.args[0].value);
        break;
    case ExprOp::Add:
        if (all_const()) return constant(r.args[0].value + r.args[1].value);
        if (is_const(r.args[0], 0)) return r.args[1];
        if (is_const(r.args[1], 0)) return r.args[0];
        break;
    case ExprOp::Sub:
        if (all_const()) return constant(r.args[0].value - r.args[1].value);
        if (is_const(r.args[1], 0)) return r.args[0];
        break;
    case ExprOp::Mul:
        if (all_const()) return constant(r.args[0].value * r.args[1].value);
        if (is_const(r.args[0], 1)) return r.args[1];
        if (is_const(r.args[1], 1)) return r.args[0];
        if (is_const(r.args[0], 0) || is_const(r.args[1], 0)) return constant(0);
        break;
    case ExprOp::Div:
        if (all_const() && r.args[1].value != 0) return constant(r.args[0].value / r.args[1].value);
        if (is_const(r.args[1], 1)) return r.args[0];
        if (is_const(r.args[0], 0) && !is_const(r.args[1], 0)) return constant(0);
        break;
    case ExprOp::Min:
    case ExprOp::Max:
        if (r.args.size() == 1) return r.args[0];
        if (all_const()) {
            double m = r.args[0].value;
            for (const auto& a : r.args)
                m = r.op == ExprOp::Min ? std::min(m, a.value) : std::max(m, a.value);
            return constant(m);
        }
        break;
    case ExprOp::Floor:
        if (all_const()) return constant(std::floor(r.args[0].value));
        break;
    case ExprOp::Abs:
        if (all_const()) return constant(std::fabs(r.args[0].value));
        break;
    default: break;
    }
    return r;
}

} // namespace hypops
