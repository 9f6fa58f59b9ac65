#pragma once

// Transition-driven hybrid automaton of a partitioned program: three
// transition multisets (flows, instantaneous, stochastic) over the variable
// partition, built per component and combined by multiset union. Input is a
// normalized program (at a finite size or in the limit).

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hypops/errors.hpp"
#include "hypops/normalize.hpp"
#include "hypops/program.hpp"
#include "hypops/random_spec.hpp"
#include "hypops/rng.hpp"

namespace hypops {

struct TcTransition {
    std::string name;
    Guard guard;                                    // may be trivially true
    Expr rate;                                      // size-free g in limit mode
    std::vector<std::pair<int, Expr>> increments;   // slot -> expected increment
};

struct TsTransition {
    std::string name;
    Guard guard;
    Expr rate;
    Reset reset;
};

struct TdTransition {
    std::string name;
    Guard guard;                 // full guard including any timed conjunct
    std::optional<Expr> timed_h0;
    Guard untimed_rest;
    Expr weight;
    Reset reset;
};

struct Tdsha {
    Program program; // normalized program that produced this automaton
    std::vector<int> discrete_slots;
    std::vector<int> continuous_slots;
    std::vector<int> environment_slots;
    std::vector<TcTransition> tc;
    std::vector<TsTransition> ts;
    std::vector<TdTransition> td;
    bool uses_time = false;

    ProgramMode mode() const { return program.mode; }
};

namespace detail {

inline bool reset_uses_time(const Reset& r) {
    for (const auto& u : r.updates) {
        if (contains_time(u.base)) return true;
        if (u.random) {
            bool t = false;
            visit_random_spec_exprs(*u.random, [&](const Expr& e) { t = t || e.op == ExprOp::Time; });
            if (t) return true;
        }
    }
    return false;
}

// Expected increment of one continuous-class update as an expression.
// State-independent means of families without an algebraic closed form are
// folded numerically.
inline Expr expected_increment_expr(const ResetUpdate& u, const Env& params) {
    Expr det = u.base;
    if (!u.random) return det;
    Expr mean;
    try {
        mean = expected_value_expr(*u.random);
    } catch (const NoClosedForm&) {
        bool state_free = true;
        visit_random_spec_exprs(*u.random, [&](const Expr& e) {
            if (e.op == ExprOp::Var || e.op == ExprOp::Time) state_free = false;
        });
        if (!state_free)
            throw Error("state-dependent " + std::string(dist_name(u.random->dist)) +
                        " increment has no expressible mean");
        mean = constant(expected_value(*u.random, params));
    }
    Expr contribution = mul(constant(u.sign), mul(u.random_scale, std::move(mean)));
    if (det.op == ExprOp::Const && det.value == 0.0) return contribution;
    return add(std::move(det), std::move(contribution));
}

} // namespace detail

// Builds the automaton of one component (already normalized).
inline Tdsha build_component_tdsha(const Program& p, const Component& comp) {
    Tdsha out;
    out.program = p;
    for (std::size_t i = 0; i < p.variables.size(); ++i) {
        switch (p.variables[i].kind) {
        case VarKind::Discrete: out.discrete_slots.push_back(static_cast<int>(i)); break;
        case VarKind::Continuous: out.continuous_slots.push_back(static_cast<int>(i)); break;
        case VarKind::Environment: out.environment_slots.push_back(static_cast<int>(i)); break;
        }
    }
    Env params = p.param_env();

    for (const auto& act : comp.actions) {
        bool timed = false;
        detail::TimedGuardSplit split;
        if (!detail::split_timed_guard(act.guard, split))
            throw ValidationFailed("malformed timed guard in '" + act.name + "'");
        timed = split.h0.has_value();
        if (timed || detail::reset_uses_time(act.reset)) out.uses_time = true;

        if (act.kind == ActionKind::Instantaneous) {
            TdTransition td;
            td.name = act.name;
            td.guard = act.guard;
            td.timed_h0 = split.h0;
            td.untimed_rest = split.rest;
            td.weight = act.rate_or_weight;
            td.reset = act.reset;
            out.td.push_back(std::move(td));
            continue;
        }
        if (act.cls == ActionClass::Discrete) {
            TsTransition ts;
            ts.name = act.name;
            ts.guard = act.guard;
            ts.rate = act.rate_or_weight;
            ts.reset = act.reset;
            out.ts.push_back(std::move(ts));
            continue;
        }
        TcTransition tc;
        tc.name = act.name;
        tc.guard = act.guard;
        tc.rate = act.rate_or_weight;
        for (const auto& u : act.reset.updates) {
            int slot = p.var_index(u.target);
            if (slot < 0)
                throw UnboundVariable("reset target '" + u.target + "'");
            if (p.variables[slot].kind != VarKind::Continuous)
                throw ValidationFailed("flow '" + act.name + "' touches non-continuous variable '" + u.target +
                                       "'");
            tc.increments.emplace_back(slot, fold_constants(detail::expected_increment_expr(u, params)));
        }
        out.tc.push_back(std::move(tc));
    }
    return out;
}

// Multiset union of automata over the same variables; duplicates are kept.
inline Tdsha compose(Tdsha a, const Tdsha& b) {
    a.tc.insert(a.tc.end(), b.tc.begin(), b.tc.end());
    a.ts.insert(a.ts.end(), b.ts.begin(), b.ts.end());
    a.td.insert(a.td.end(), b.td.begin(), b.td.end());
    a.uses_time = a.uses_time || b.uses_time;
    return a;
}

// Automaton of a whole normalized program: composition over its components,
// optionally in a caller-chosen order.
inline Tdsha build_tdsha(const Program& normalized, const std::vector<int>* component_order = nullptr) {
    if (normalized.mode == ProgramMode::Raw)
        throw InvalidParameter("build_tdsha expects a normalized program (at-size or limit)");
    if (!is_flat(normalized))
        throw ValidationFailed("build_tdsha requires a flat program");
    std::vector<int> order;
    if (component_order) {
        order = *component_order;
    } else {
        for (std::size_t i = 0; i < normalized.components.size(); ++i)
            order.push_back(static_cast<int>(i));
    }
    std::optional<Tdsha> acc;
    for (int idx : order) {
        Tdsha part = build_component_tdsha(normalized, normalized.components[static_cast<std::size_t>(idx)]);
        acc = acc ? compose(std::move(*acc), part) : std::move(part);
    }
    if (!acc) throw ValidationFailed("program has no components");
    return std::move(*acc);
}

// ---------------------------------------------------------------------------
// Sampled chain-freeness check: a semi-decision, never a proof. Samples
// points from the firing region of each jump transition, applies its reset
// and tests whether the image meets the closure of any instantaneous guard.

struct SampleBox {
    // per-variable [lo, hi]; integer variables are sampled on the lattice
    std::vector<std::pair<double, double>> bounds;
};

struct ChainFreeVerdict {
    bool violation = false;
    std::string from, into;
    std::vector<double> witness_pre, witness_post;
    long long samples_tried = 0;

    std::string str() const {
        if (!violation) return "no-witness-found";
        return "violation: reset of '" + from + "' lands in closure of guard of '" + into + "'";
    }
};

namespace detail {

inline bool closure_eval(const Guard& g, const Env& env) {
    switch (g.kind) {
    case Guard::Kind::True: return true;
    case Guard::Kind::Atom: return eval_expr(g.atom.lhs, env) >= 0.0; // strictness dropped: closure
    case Guard::Kind::And:
        for (const auto& c : g.children)
            if (!closure_eval(c, env)) return false;
        return true;
    case Guard::Kind::Or:
        for (const auto& c : g.children)
            if (closure_eval(c, env)) return true;
        return false;
    }
    return false;
}

inline void apply_reset_env(const Program& p, const Reset& reset, Env& env, SplitRng& rng) {
    struct Staged {
        const ResetUpdate* u;
        double rhs;
    };
    std::vector<Staged> staged;
    for (const auto& u : reset.updates) {
        double rhs = eval_expr(u.base, env);
        if (u.random)
            rhs += u.sign * eval_expr(u.random_scale, env) * sample_random(*u.random, env, rng);
        staged.push_back({&u, rhs});
    }
    for (const auto& s : staged) {
        const VariableDecl* v = p.find_var(s.u->target);
        double value = s.u->set ? s.rhs : env.values[s.u->target] + s.rhs;
        if (v && v->domain == VarDomain::Integer) value = std::llround(value);
        env.values[s.u->target] = value;
    }
}

} // namespace detail

inline ChainFreeVerdict check_chain_free_sampled(const Tdsha& t, const SampleBox& box, long long budget,
                                                 SplitRng rng) {
    ChainFreeVerdict verdict;
    const Program& p = t.program;
    if (t.td.empty()) return verdict;
    if (box.bounds.size() != p.variables.size())
        throw InvalidParameter("sample box must cover every variable");

    auto sample_env = [&]() {
        Env env = p.param_env();
        if (p.mode == ProgramMode::AtSize) env.size_n = p.bound_size;
        for (std::size_t i = 0; i < p.variables.size(); ++i) {
            auto [lo, hi] = box.bounds[i];
            double x = rng.uniform(lo, hi);
            if (p.variables[i].domain == VarDomain::Integer) x = std::floor(x + 0.5);
            env.values[p.variables[i].name] = x;
        }
        env.time = rng.uniform(0.0, 1.0);
        return env;
    };

    struct Source {
        const std::string* name;
        const Guard* guard;
        const Reset* reset;
        const Expr* rate; // null for TD members
    };
    std::vector<Source> sources;
    for (const auto& td : t.td)
        sources.push_back({&td.name, &td.guard, &td.reset, nullptr});
    for (const auto& ts : t.ts)
        sources.push_back({&ts.name, &ts.guard, &ts.reset, &ts.rate});

    for (const auto& src : sources) {
        long long accepted = 0, tried = 0;
        while (accepted < budget && tried < budget * 64) {
            ++tried;
            ++verdict.samples_tried;
            Env env = sample_env();
            try {
                if (!detail::closure_eval(*src.guard, env)) continue;
                if (src.rate && eval_expr(*src.rate, env) <= 0.0) continue;
                ++accepted;
                Env pre = env;
                detail::apply_reset_env(p, *src.reset, env, rng);
                // self re-activation counts: a jump may not land where any
                // instantaneous guard (its own included) is active
                for (const auto& td : t.td) {
                    if (detail::closure_eval(td.guard, env)) {
                        verdict.violation = true;
                        verdict.from = *src.name;
                        verdict.into = td.name;
                        for (const auto& v : p.variables) {
                            verdict.witness_pre.push_back(pre.values[v.name]);
                            verdict.witness_post.push_back(env.values[v.name]);
                        }
                        return verdict;
                    }
                }
            } catch (const Error&) {
                continue; // unsampleable point (division by zero etc.)
            }
        }
    }
    return verdict;
}

// Human-readable listing, one line per transition.
inline std::string dump_tdsha(const Tdsha& t) {
    std::ostringstream os;
    const Program& p = t.program;
    os << "variables:";
    for (int s : t.discrete_slots) os << " " << p.variables[static_cast<std::size_t>(s)].name << "(discrete)";
    for (int s : t.continuous_slots) os << " " << p.variables[static_cast<std::size_t>(s)].name << "(continuous)";
    for (int s : t.environment_slots) os << " " << p.variables[static_cast<std::size_t>(s)].name << "(environment)";
    if (t.uses_time) os << " Time(clock)";
    os << "\n";
    for (const auto& tc : t.tc) {
        os << "TC " << tc.name << ": guard " << to_string(tc.guard) << "; rate " << to_string(tc.rate)
           << "; increments";
        for (const auto& [slot, inc] : tc.increments)
            os << " " << p.variables[static_cast<std::size_t>(slot)].name << " += " << to_string(inc);
        os << "\n";
    }
    for (const auto& ts : t.ts) {
        os << "TS " << ts.name << ": guard " << to_string(ts.guard) << "; rate " << to_string(ts.rate)
           << "; reset";
        for (const auto& u : ts.reset.updates) {
            os << " " << u.target << (u.set ? " = " : " += ");
            if (u.random) {
                if (!(u.base.op == ExprOp::Const && u.base.value == 0.0)) os << to_string(u.base) << " + ";
                if (u.sign < 0) os << "-";
                os << to_string(*u.random);
            } else {
                os << to_string(u.base);
            }
            os << ";";
        }
        os << "\n";
    }
    for (const auto& td : t.td) {
        os << "TD " << td.name << ": guard " << to_string(td.guard) << "; weight " << to_string(td.weight)
           << "; reset";
        for (const auto& u : td.reset.updates) {
            os << " " << u.target << (u.set ? " = " : " += ");
            if (u.random) {
                if (!(u.base.op == ExprOp::Const && u.base.value == 0.0)) os << to_string(u.base) << " + ";
                if (u.sign < 0) os << "-";
                os << to_string(*u.random);
            } else {
                os << to_string(u.base);
            }
            os << ";";
        }
        os << "\n";
    }
    return os.str();
}

} // namespace hypops
