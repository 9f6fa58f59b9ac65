#pragma once

// Normalization by system size: continuous-class variables are divided by N
// and rates, guards, weights and resets are rewritten over the normalized
// variables. At a finite size the size symbol stays bound; in limit mode all
// N dependence is eliminated symbolically (substitute X = N*x, divide rates
// by N, compute the N -> infinity limit of the polynomial N factors).
// Anything non-eliminable raises LimitNotNFree.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hypops/errors.hpp"
#include "hypops/program.hpp"

namespace hypops {

namespace symbolic {

// Syntactic upper bound on the growth order in N: e = O(N^deg). nullopt when
// the order cannot be bounded syntactically (N under floor/indicator).
inline std::optional<int> n_degree(const Expr& e) {
    switch (e.op) {
    case ExprOp::Const:
    case ExprOp::Var:
    case ExprOp::Param:
    case ExprOp::Time: return 0;
    case ExprOp::SizeN: return 1;
    case ExprOp::Neg:
    case ExprOp::Abs: return n_degree(e.args[0]);
    case ExprOp::Add:
    case ExprOp::Sub:
    case ExprOp::Min:
    case ExprOp::Max: {
        int m = 0;
        for (const auto& a : e.args) {
            auto d = n_degree(a);
            if (!d) return std::nullopt;
            m = std::max(m, *d);
        }
        return m;
    }
    case ExprOp::Mul: {
        auto da = n_degree(e.args[0]);
        auto db = n_degree(e.args[1]);
        if (!da || !db) return std::nullopt;
        return *da + *db;
    }
    case ExprOp::Div: {
        auto da = n_degree(e.args[0]);
        auto db = n_degree(e.args[1]);
        if (!da || !db) return std::nullopt;
        return *da - *db;
    }
    case ExprOp::Indicator: {
        bool has_n = false;
        visit_guard_exprs(*e.guard, [&](const Expr& n) { has_n = has_n || n.op == ExprOp::SizeN; });
        if (has_n) return std::nullopt;
        return 0;
    }
    case ExprOp::Floor:
        if (contains_size_symbol(e.args[0])) return std::nullopt;
        return 0;
    }
    return std::nullopt;
}

// lim_{N -> inf} e / N^k, as an expression free of the size symbol.
// nullopt when the limit does not exist or cannot be derived syntactically.
inline std::optional<Expr> limit_div(const Expr& e, int k) {
    if (k < 0) {
        // e * N^|k| converges only if e vanishes identically
        if (e.op == ExprOp::Const && e.value == 0.0) return constant(0.0);
        return std::nullopt;
    }
    switch (e.op) {
    case ExprOp::Const:
        return k > 0 ? constant(0.0) : Expr(e);
    case ExprOp::Var:
    case ExprOp::Param:
    case ExprOp::Time:
        return k > 0 ? constant(0.0) : Expr(e);
    case ExprOp::SizeN:
        if (k == 0) return std::nullopt; // diverges
        return k == 1 ? constant(1.0) : constant(0.0);
    case ExprOp::Neg: {
        auto a = limit_div(e.args[0], k);
        if (!a) return std::nullopt;
        return neg(std::move(*a));
    }
    case ExprOp::Abs: {
        auto a = limit_div(e.args[0], k);
        if (!a) return std::nullopt;
        return abs_of(std::move(*a));
    }
    case ExprOp::Add:
    case ExprOp::Sub: {
        auto a = limit_div(e.args[0], k);
        auto b = limit_div(e.args[1], k);
        if (!a || !b) return std::nullopt;
        return binary(e.op, std::move(*a), std::move(*b));
    }
    case ExprOp::Min:
    case ExprOp::Max: {
        // N > 0, so dividing distributes over min/max
        std::vector<Expr> out;
        for (const auto& a : e.args) {
            auto r = limit_div(a, k);
            if (!r) return std::nullopt;
            out.push_back(std::move(*r));
        }
        return nary(e.op, std::move(out));
    }
    case ExprOp::Mul: {
        auto da = n_degree(e.args[0]);
        auto db = n_degree(e.args[1]);
        if (!da || !db) return std::nullopt;
        if (*da + *db < k) return constant(0.0); // product grows slower than N^k
        int ka = std::min(*da, k);
        int kb = k - ka;
        if (kb > *db) return std::nullopt;
        auto a = limit_div(e.args[0], ka);
        auto b = limit_div(e.args[1], kb);
        if (!a || !b) return std::nullopt;
        return mul(std::move(*a), std::move(*b));
    }
    case ExprOp::Div: {
        auto db = n_degree(e.args[1]);
        if (!db) return std::nullopt;
        if (*db == 0 && !contains_size_symbol(e.args[1])) {
            auto a = limit_div(e.args[0], k);
            if (!a) return std::nullopt;
            return divide(std::move(*a), e.args[1]);
        }
        // a / b / N^k == (a / N^(k+db)) / (b / N^db)
        auto a = limit_div(e.args[0], k + *db);
        auto b = limit_div(e.args[1], *db);
        if (!a || !b) return std::nullopt;
        return divide(std::move(*a), std::move(*b));
    }
    case ExprOp::Indicator: {
        bool has_n = false;
        visit_guard_exprs(*e.guard, [&](const Expr& n) { has_n = has_n || n.op == ExprOp::SizeN; });
        if (has_n) return std::nullopt; // guards are normalized separately
        return k > 0 ? constant(0.0) : Expr(e);
    }
    case ExprOp::Floor:
        if (contains_size_symbol(e.args[0])) return std::nullopt;
        return k > 0 ? constant(0.0) : Expr(e);
    }
    return std::nullopt;
}

} // namespace symbolic

namespace detail {

// Rewrites an expression over raw variables into one over normalized
// variables: every continuous-class variable reference X becomes N * X.
template <class IsContinuous>
inline Expr substitute_normalized(const Expr& e, const IsContinuous& is_cont) {
    Expr r = e;
    if (r.op == ExprOp::Var && is_cont(r.name))
        return mul(size_symbol(), var_ref(r.name));
    for (auto& a : r.args)
        a = substitute_normalized(a, is_cont);
    if (r.op == ExprOp::Indicator && r.guard) {
        Guard g = *r.guard;
        std::function<void(Guard&)> walk = [&](Guard& gg) {
            if (gg.kind == Guard::Kind::Atom)
                gg.atom.lhs = substitute_normalized(gg.atom.lhs, is_cont);
            for (auto& c : gg.children)
                walk(c);
        };
        walk(g);
        r.guard = std::make_shared<const Guard>(std::move(g));
    }
    return r;
}

template <class IsContinuous>
inline Guard substitute_normalized_guard(const Guard& g, const IsContinuous& is_cont) {
    Guard r = g;
    if (r.kind == Guard::Kind::Atom)
        r.atom.lhs = substitute_normalized(r.atom.lhs, is_cont);
    for (auto& c : r.children)
        c = substitute_normalized_guard(c, is_cont);
    return r;
}

inline Expr limit_or_throw(const Expr& e, int k, const std::string& where) {
    auto r = symbolic::limit_div(e, k);
    if (!r)
        throw LimitNotNFree(where + ": size dependence could not be eliminated from '" + to_string(e) +
                            "'; consult the scaling checker");
    return fold_constants(*r);
}

// Guard atoms stay truth-equivalent under division by N > 0. In limit mode,
// prefer the order-0 limit; rescale by 1/N when the atom grows with N.
inline Expr limit_guard_atom(const Expr& lhs, const std::string& where) {
    if (auto r0 = symbolic::limit_div(lhs, 0))
        return fold_constants(*r0);
    if (auto r1 = symbolic::limit_div(lhs, 1))
        return fold_constants(*r1);
    throw LimitNotNFree(where + ": guard atom '" + to_string(lhs) + "' has no size-free limit");
}

inline Guard limit_guard(const Guard& g, const std::string& where) {
    Guard r = g;
    if (r.kind == Guard::Kind::Atom)
        r.atom.lhs = limit_guard_atom(r.atom.lhs, where);
    for (auto& c : r.children)
        c = limit_guard(c, where);
    return r;
}

inline RandomSpec map_spec_params(const RandomSpec& spec, const std::function<Expr(const Expr&)>& fn) {
    RandomSpec out = spec;
    for (auto& p : out.params)
        p = fn(p);
    for (auto& [v, w] : out.cats) {
        v = fn(v);
        w = fn(w);
    }
    return out;
}

} // namespace detail

enum class NormalizeMode { AtSize, Limit };

// Numeric limit of init(N)/N as N grows; covers floor() forms that defeat
// the symbolic route. Exact to ~1e-12 relative for the supported grammar.
inline double limit_initial_fraction(const Expr& init, const Env& params) {
    const double big = 9007199254740992.0; // 2^53
    Env env = params;
    env.size_n = big;
    return eval_expr(init, env) / big;
}

// Builds the normalized program. Continuous-class variables keep their
// names but now denote densities; their domain becomes real.
inline Program normalize(const Program& p, NormalizeMode mode, double size = 0.0) {
    if (!is_flat(p))
        throw ValidationFailed("normalize requires a flat program");
    if (mode == NormalizeMode::AtSize && !(size > 0))
        throw InvalidParameter("normalize at-size requires a positive size");

    auto is_cont = [&p](const std::string& name) {
        const VariableDecl* v = p.find_var(name);
        return v && v->kind == VarKind::Continuous;
    };

    Program out = p;
    out.mode = mode == NormalizeMode::AtSize ? ProgramMode::AtSize : ProgramMode::Limit;
    out.bound_size = mode == NormalizeMode::AtSize ? size : 0.0;

    Env params = p.param_env();

    for (auto& v : out.variables) {
        if (v.kind != VarKind::Continuous) {
            if (mode == NormalizeMode::Limit && contains_size_symbol(v.init))
                v.init = detail::limit_or_throw(v.init, 0, "init of " + v.name);
            continue;
        }
        v.domain = VarDomain::Real;
        if (mode == NormalizeMode::AtSize) {
            Env env = params;
            env.size_n = size;
            double raw = eval_expr(v.init, env);
            if (p.find_var(v.name)->domain == VarDomain::Integer) raw = std::llround(raw);
            v.init = constant(raw / size);
        } else {
            v.init = constant(limit_initial_fraction(v.init, params));
        }
    }

    for (auto& comp : out.components) {
        for (auto& act : comp.actions) {
            const std::string where = comp.name + "." + act.name;
            Expr rate = detail::substitute_normalized(act.rate_or_weight, is_cont);
            Guard guard = detail::substitute_normalized_guard(act.guard, is_cont);

            if (mode == NormalizeMode::Limit) {
                if (act.kind == ActionKind::Stochastic && act.cls == ActionClass::Continuous)
                    rate = detail::limit_or_throw(rate, 1, where); // g = rate / N
                else
                    rate = detail::limit_or_throw(rate, 0, where); // O(1) rate or weight
                guard = detail::limit_guard(guard, where);
            }
            act.rate_or_weight = rate;
            act.guard = guard;

            // Continuous-class actions in limit mode keep their raw
            // increments: the flow construction consumes the
            // pre-normalization increment datum together with the
            // size-free rate g.
            bool keep_raw_increments = mode == NormalizeMode::Limit &&
                                       act.kind == ActionKind::Stochastic &&
                                       act.cls == ActionClass::Continuous;
            if (keep_raw_increments) {
                for (auto& u : act.reset.updates) {
                    u.base = detail::limit_or_throw(u.base, 0, where);
                    if (u.random)
                        u.random = detail::map_spec_params(*u.random, [&](const Expr& e) {
                            return detail::limit_or_throw(detail::substitute_normalized(e, is_cont), 0, where);
                        });
                }
                continue;
            }

            for (auto& u : act.reset.updates) {
                const VariableDecl* v = p.find_var(u.target);
                bool cont_target = v && v->kind == VarKind::Continuous;
                Expr base = detail::substitute_normalized(u.base, is_cont);
                auto subst = [&](const Expr& e) { return detail::substitute_normalized(e, is_cont); };
                if (u.random)
                    u.random = detail::map_spec_params(*u.random, subst);

                if (cont_target) {
                    base = divide(base, size_symbol());
                    u.random_scale = divide(u.random_scale, size_symbol());
                }
                if (mode == NormalizeMode::Limit) {
                    base = detail::limit_or_throw(base, 0, where);
                    u.random_scale = detail::limit_or_throw(u.random_scale, 0, where);
                    if (u.random) {
                        bool scale_vanishes =
                            u.random_scale.op == ExprOp::Const && u.random_scale.value == 0.0;
                        if (scale_vanishes) {
                            u.random.reset(); // draw contributes nothing in the limit
                            u.random_scale = constant(1.0);
                        } else {
                            u.random = detail::map_spec_params(
                                *u.random, [&](const Expr& e) { return detail::limit_or_throw(e, 0, where); });
                        }
                    }
                    base = fold_constants(base);
                }
                u.base = base;
            }
            // drop updates that became no-ops (x += 0 with no draw)
            auto& ups = act.reset.updates;
            ups.erase(std::remove_if(ups.begin(), ups.end(),
                                     [](const ResetUpdate& u) {
                                         return !u.set && !u.random && u.base.op == ExprOp::Const &&
                                                u.base.value == 0.0;
                                     }),
                      ups.end());
        }
    }
    return out;
}

// Maps a normalized state back to raw counts (inverse of at-size
// normalization on variable values).
inline std::vector<double> denormalize_state(const Program& normalized, const std::vector<double>& values) {
    if (normalized.mode != ProgramMode::AtSize)
        throw InvalidParameter("denormalize needs an at-size normalized program");
    std::vector<double> out = values;
    for (std::size_t i = 0; i < normalized.variables.size() && i < out.size(); ++i)
        if (normalized.variables[i].kind == VarKind::Continuous)
            out[i] *= normalized.bound_size;
    return out;
}

inline std::vector<double> normalize_state(const Program& raw, double size, const std::vector<double>& values) {
    std::vector<double> out = values;
    for (std::size_t i = 0; i < raw.variables.size() && i < out.size(); ++i)
        if (raw.variables[i].kind == VarKind::Continuous)
            out[i] /= size;
    return out;
}

} // namespace hypops
