#pragma once

// Population model representation: variables, components, guarded actions
// with rates/weights and resets. Programs are immutable after validation and
// all operations here are pure.

#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hypops/errors.hpp"
#include "hypops/expr.hpp"
#include "hypops/random_spec.hpp"

namespace hypops {

enum class VarKind { Discrete, Continuous, Environment };
enum class VarDomain { Integer, Real };

struct VariableDecl {
    std::string name;
    VarKind kind = VarKind::Discrete;
    VarDomain domain = VarDomain::Integer;
    Expr init;
};

enum class ActionKind { Stochastic, Instantaneous };
enum class ActionClass { Continuous, Discrete };

// One atomic update. `base` is the deterministic part; `random`, when
// present, adds sign * scale * draw. The four basic shapes are
//   X += e      -> set=false, base=e
//   X  = e      -> set=true,  base=e
//   X += sample -> set=false, base=0, random
//   X  = e? + sample -> set=true, base=e (default 0), random
struct ResetUpdate {
    std::string target;
    int slot = -1;
    bool set = false;
    Expr base = constant(0.0);
    bool explicit_base = true;
    std::optional<RandomSpec> random;
    double sign = 1.0;
    Expr random_scale = constant(1.0);
};

// Simultaneous updates: every rhs is evaluated in the pre-state and each
// target appears at most once.
struct Reset {
    std::vector<ResetUpdate> updates;
};

struct Action {
    std::string name;
    ActionKind kind = ActionKind::Stochastic;
    ActionClass cls = ActionClass::Discrete; // instantaneous actions are always discrete
    Guard guard;
    Expr rate_or_weight = constant(1.0);
    Reset reset;
    // Continuation as component multiplicities. Empty means "this component
    // once" (the flat self-recursion).
    std::vector<std::pair<std::string, int>> continuation;
    bool explicit_continuation = false;
};

struct Component {
    std::string name;
    std::vector<Action> actions;
};

enum class ProgramMode { Raw, AtSize, Limit };

struct Program {
    std::vector<VariableDecl> variables;
    std::vector<Component> components;
    std::map<std::string, double> params;
    std::string size_name = "N";
    // Initial network as component multiplicities. Empty means one copy of
    // each component.
    std::vector<std::pair<std::string, int>> initial_network;

    ProgramMode mode = ProgramMode::Raw;
    double bound_size = 0.0; // AtSize only

    int var_index(const std::string& name) const {
        for (std::size_t i = 0; i < variables.size(); ++i)
            if (variables[i].name == name) return static_cast<int>(i);
        return -1;
    }
    const VariableDecl* find_var(const std::string& name) const {
        int i = var_index(name);
        return i < 0 ? nullptr : &variables[i];
    }
    std::vector<std::pair<std::string, int>> network() const {
        if (!initial_network.empty()) return initial_network;
        std::vector<std::pair<std::string, int>> net;
        for (const auto& c : components)
            net.emplace_back(c.name, 1);
        return net;
    }
    Env param_env() const {
        Env env;
        for (const auto& [k, v] : params)
            env.values[k] = v;
        return env;
    }
};

// ---------------------------------------------------------------------------
// Diagnostics

struct Diagnostic {
    enum class Severity { Error, Warning };
    Severity severity = Severity::Error;
    std::string where; // action or variable
    std::string rule;  // short rule identifier
    std::string message;

    std::string str() const {
        std::string s = severity == Severity::Error ? "error" : "warning";
        return s + " [" + rule + "] " + where + ": " + message;
    }
};

namespace detail {

struct NameTable {
    std::set<std::string> vars;
    std::set<std::string> params;
    std::string size_name;
};

inline void check_names_in_expr(const Expr& e, const NameTable& names, const std::string& where,
                                std::vector<Diagnostic>& out) {
    visit_exprs(e, [&](const Expr& n) {
        if (n.op == ExprOp::Var && !names.vars.count(n.name) && !names.params.count(n.name))
            out.push_back({Diagnostic::Severity::Error, where, "name-resolution",
                           "reference to undeclared name '" + n.name + "'"});
        if (n.op == ExprOp::Param && !names.params.count(n.name))
            out.push_back({Diagnostic::Severity::Error, where, "name-resolution",
                           "reference to undeclared parameter '" + n.name + "'"});
    });
}

// A guard conjunct of the shape (time - h0 >= 0). Returns h0.
inline std::optional<Expr> timed_atom_h0(const Guard& g) {
    if (g.kind != Guard::Kind::Atom || g.atom.strict) return std::nullopt;
    const Expr& lhs = g.atom.lhs;
    if (lhs.op == ExprOp::Sub && lhs.args[0].op == ExprOp::Time && !contains_time(lhs.args[1]))
        return lhs.args[1];
    return std::nullopt;
}

// Splits a guard into its timed conjunct (if any) and the remaining guard.
// Fails (returns false) if `time` occurs anywhere outside a single
// top-level conjunct of the form time >= h0.
struct TimedGuardSplit {
    std::optional<Expr> h0;
    Guard rest;
};

inline bool split_timed_guard(const Guard& g, TimedGuardSplit& out) {
    std::vector<const Guard*> conjuncts;
    if (g.kind == Guard::Kind::And) {
        for (const auto& c : g.children)
            conjuncts.push_back(&c);
    } else {
        conjuncts.push_back(&g);
    }
    std::vector<Guard> rest;
    for (const Guard* c : conjuncts) {
        if (auto h0 = timed_atom_h0(*c)) {
            if (out.h0) return false; // at most one timed conjunct
            out.h0 = *h0;
            continue;
        }
        bool uses_time = false;
        visit_guard_exprs(*c, [&](const Expr& n) { uses_time = uses_time || n.op == ExprOp::Time; });
        if (uses_time) return false;
        rest.push_back(*c);
    }
    if (rest.empty())
        out.rest = guard_true();
    else if (rest.size() == 1)
        out.rest = rest[0];
    else
        out.rest = guard_and(std::move(rest));
    return true;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Validation. Findings are returned with rule identifiers; validate_or_throw
// raises ValidationFailed when any error-severity finding exists.

inline std::vector<Diagnostic> validate(const Program& p) {
    using Sev = Diagnostic::Severity;
    std::vector<Diagnostic> out;
    detail::NameTable names;
    names.size_name = p.size_name;
    for (const auto& [k, v] : p.params) {
        (void)v;
        names.params.insert(k);
    }

    std::set<std::string> seen;
    for (const auto& v : p.variables) {
        if (!seen.insert(v.name).second)
            out.push_back({Sev::Error, v.name, "unique-names", "duplicate variable name"});
        if (names.params.count(v.name))
            out.push_back({Sev::Error, v.name, "unique-names", "variable shadows a parameter"});
        names.vars.insert(v.name);
        if (v.kind != VarKind::Environment && v.domain != VarDomain::Integer)
            out.push_back({Sev::Error, v.name, "domain-kind",
                           "model variables take integer values; only environment variables may be real"});
        detail::check_names_in_expr(v.init, names, v.name, out);
        if (contains_var(v.init))
            out.push_back({Sev::Error, v.name, "init-form", "initial value may reference only parameters and the size symbol"});
        if (contains_time(v.init))
            out.push_back({Sev::Error, v.name, "init-form", "initial value may not reference time"});
        if (v.domain == VarDomain::Integer && !contains_size_symbol(v.init)) {
            Env env = p.param_env();
            try {
                double x = eval_expr(v.init, env);
                if (x != std::floor(x))
                    out.push_back({Sev::Error, v.name, "domain-kind", "integer variable with non-integer initial value"});
            } catch (const Error&) {
                // name errors reported above
            }
        }
    }

    std::set<std::string> comp_names;
    auto is_continuous_class_var = [&](const std::string& name) {
        const VariableDecl* v = p.find_var(name);
        return v && v->kind == VarKind::Continuous;
    };

    std::set<std::string> action_names;
    for (const auto& comp : p.components) {
        if (!comp_names.insert(comp.name).second)
            out.push_back({Sev::Error, comp.name, "unique-names", "duplicate component name"});
        for (const auto& act : comp.actions) {
            const std::string where = comp.name + "." + act.name;
            if (!action_names.insert(act.name).second)
                out.push_back({Sev::Error, where, "unique-names", "duplicate action name"});

            detail::check_names_in_expr(act.rate_or_weight, names, where, out);
            std::function<void(const Guard&)> check_guard_names = [&](const Guard& gg) {
                if (gg.kind == Guard::Kind::Atom)
                    detail::check_names_in_expr(gg.atom.lhs, names, where, out);
                for (const auto& c : gg.children)
                    check_guard_names(c);
            };
            check_guard_names(act.guard);

            // time usage rules
            if (contains_time(act.rate_or_weight))
                out.push_back({Sev::Error, where, "time-usage",
                               act.kind == ActionKind::Stochastic
                                   ? "stochastic rates may not reference time"
                                   : "instantaneous weights may not reference time"});
            detail::TimedGuardSplit split;
            bool guard_time_ok = detail::split_timed_guard(act.guard, split);
            if (!guard_time_ok) {
                out.push_back({Sev::Error, where, "time-usage",
                               "time may appear in a guard only as a single conjunct of the form time >= h0(X)"});
            } else if (split.h0) {
                if (act.kind != ActionKind::Instantaneous)
                    out.push_back({Sev::Error, where, "time-usage",
                                   "timed guards are confined to instantaneous actions"});
                else if (contains_var_if(*split.h0, is_continuous_class_var))
                    out.push_back({Sev::Warning, where, "timed-guard-form",
                                   "timed activation h0 references continuous-class variables; the limit "
                                   "construction rejects this (the scaling checker flags it)"});
            }

            if (act.kind == ActionKind::Instantaneous && act.cls == ActionClass::Continuous)
                out.push_back({Sev::Error, where, "class-annotation", "instantaneous actions are always discrete"});

            // resets
            std::set<std::string> targets;
            for (const auto& u : act.reset.updates) {
                if (!names.vars.count(u.target)) {
                    out.push_back({Sev::Error, where, "name-resolution",
                                   "reset targets undeclared variable '" + u.target + "'"});
                    continue;
                }
                if (names.params.count(u.target))
                    out.push_back({Sev::Error, where, "reset-form", "reset may not assign to a parameter"});
                if (!targets.insert(u.target).second)
                    out.push_back({Sev::Error, where, "reset-form",
                                   "variable '" + u.target + "' appears more than once in a reset"});
                detail::check_names_in_expr(u.base, names, where, out);
                if (u.random)
                    visit_random_spec_exprs(*u.random, [&](const Expr& n) {
                        if (n.op == ExprOp::Var && !names.vars.count(n.name) && !names.params.count(n.name))
                            out.push_back({Sev::Error, where, "name-resolution",
                                           "reference to undeclared name '" + n.name + "'"});
                    });
                bool time_in_update = contains_time(u.base);
                if (u.random) {
                    visit_random_spec_exprs(*u.random, [&](const Expr& n) {
                        if (n.op == ExprOp::Time) time_in_update = true;
                    });
                }
                if (time_in_update && act.kind == ActionKind::Stochastic && act.cls != ActionClass::Discrete)
                    out.push_back({Sev::Error, where, "time-usage",
                                   "updates reading time require the action to be kept discrete"});
            }

            // continuous-class actions: constant or random increments on
            // continuous variables only
            if (act.kind == ActionKind::Stochastic && act.cls == ActionClass::Continuous) {
                for (const auto& u : act.reset.updates) {
                    const VariableDecl* v = p.find_var(u.target);
                    if (!v) continue;
                    if (v->kind != VarKind::Continuous) {
                        out.push_back({Sev::Error, where, "continuous-increment",
                                       "continuous-class action must not touch discrete or environment variable '" +
                                           u.target + "'"});
                        continue;
                    }
                    if (u.set) {
                        out.push_back({Sev::Error, where, "continuous-increment",
                                       "continuous-class action must use increment updates, not assignment"});
                        continue;
                    }
                    if (contains_var(u.base) || contains_time(u.base))
                        out.push_back({Sev::Error, where, "continuous-increment",
                                       "continuous-class increment must be constant (parameters and the size symbol only)"});
                }
            }
        }
    }

    // network references
    for (const auto& [cname, count] : p.network()) {
        if (!comp_names.count(cname))
            out.push_back({Sev::Error, cname, "name-resolution", "initial network names unknown component"});
        if (count < 0)
            out.push_back({Sev::Error, cname, "network-form", "negative multiplicity in initial network"});
    }
    for (const auto& comp : p.components)
        for (const auto& act : comp.actions)
            for (const auto& [cname, count] : act.continuation) {
                if (!comp_names.count(cname))
                    out.push_back({Sev::Error, comp.name + "." + act.name, "name-resolution",
                                   "continuation names unknown component"});
                if (count < 0)
                    out.push_back({Sev::Error, comp.name + "." + act.name, "network-form",
                                   "negative multiplicity in continuation"});
            }

    if (p.components.empty())
        out.push_back({Sev::Error, "<model>", "empty-model", "model declares no components"});

    return out;
}

inline bool has_errors(const std::vector<Diagnostic>& ds) {
    for (const auto& d : ds)
        if (d.severity == Diagnostic::Severity::Error) return true;
    return false;
}

inline void validate_or_throw(const Program& p) {
    auto ds = validate(p);
    if (!has_errors(ds)) return;
    std::ostringstream os;
    for (const auto& d : ds)
        os << d.str() << '\n';
    throw ValidationFailed(os.str());
}

// ---------------------------------------------------------------------------
// Flattening. A program is flat iff every action of every component
// continues with exactly that component (once) and the initial network holds
// one copy of each component. flatten() is the identity on flat programs;
// otherwise it introduces one counter variable per component, strengthens
// guards by counter > 0, multiplies rates/weights by the counter, and adjusts
// updates by the occurrence counts of continuations.

inline bool is_flat(const Program& p) {
    for (const auto& comp : p.components)
        for (const auto& act : comp.actions) {
            if (!act.explicit_continuation) continue;
            if (act.continuation.size() != 1) return false;
            if (act.continuation[0].first != comp.name || act.continuation[0].second != 1) return false;
        }
    auto net = p.network();
    if (net.size() != p.components.size()) return false;
    std::map<std::string, int> mult;
    for (const auto& [n, c] : net)
        mult[n] += c;
    for (const auto& comp : p.components) {
        auto it = mult.find(comp.name);
        if (it == mult.end() || it->second != 1) return false;
    }
    return true;
}

inline Program flatten(const Program& p) {
    if (is_flat(p)) return p;

    Program out = p;
    out.initial_network.clear();

    std::map<std::string, int> init_mult;
    for (const auto& [n, c] : p.network())
        init_mult[n] += c;

    // one counter variable per component
    std::map<std::string, std::string> counter_of;
    for (const auto& comp : p.components) {
        std::string counter = "P_" + comp.name;
        while (out.var_index(counter) >= 0 || out.params.count(counter))
            counter += "_";
        counter_of[comp.name] = counter;
        VariableDecl decl;
        decl.name = counter;
        decl.kind = VarKind::Discrete;
        decl.domain = VarDomain::Integer;
        decl.init = constant(static_cast<double>(init_mult.count(comp.name) ? init_mult[comp.name] : 0));
        out.variables.push_back(decl);
    }

    for (auto& comp : out.components) {
        const std::string& counter = counter_of[comp.name];
        for (auto& act : comp.actions) {
            std::map<std::string, int> delta; // continuation occurrence counts
            if (act.explicit_continuation)
                for (const auto& [n, c] : act.continuation)
                    delta[n] += c;
            else
                delta[comp.name] += 1;
            delta[comp.name] -= 1; // one copy of the acting component is consumed

            // guard := guard && counter > 0 (counter >= 1 on integers)
            Guard gate = guard_atom(sub(var_ref(counter), constant(1.0)), false);
            if (act.guard.kind == Guard::Kind::True)
                act.guard = gate;
            else if (act.guard.kind == Guard::Kind::And)
                act.guard.children.push_back(gate);
            else
                act.guard = guard_and({act.guard, gate});

            act.rate_or_weight = mul(var_ref(counter), act.rate_or_weight);

            for (const auto& [cname, d] : delta) {
                if (d == 0) continue;
                ResetUpdate u;
                u.target = counter_of[cname];
                u.set = false;
                u.base = constant(static_cast<double>(d));
                act.reset.updates.push_back(u);
            }
            act.continuation.clear();
            act.explicit_continuation = false;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural program equality (used by the parser round-trip tests)

inline bool structurally_equal(const ResetUpdate& a, const ResetUpdate& b) {
    if (a.target != b.target || a.set != b.set || a.sign != b.sign) return false;
    if (!structurally_equal(a.base, b.base)) return false;
    if (a.random.has_value() != b.random.has_value()) return false;
    if (a.random && !structurally_equal(*a.random, *b.random)) return false;
    return structurally_equal(a.random_scale, b.random_scale);
}

inline bool structurally_equal(const Action& a, const Action& b) {
    if (a.name != b.name || a.kind != b.kind || a.cls != b.cls) return false;
    if (!structurally_equal(a.guard, b.guard)) return false;
    if (!structurally_equal(a.rate_or_weight, b.rate_or_weight)) return false;
    if (a.reset.updates.size() != b.reset.updates.size()) return false;
    for (std::size_t i = 0; i < a.reset.updates.size(); ++i)
        if (!structurally_equal(a.reset.updates[i], b.reset.updates[i])) return false;
    return a.continuation == b.continuation && a.explicit_continuation == b.explicit_continuation;
}

inline bool structurally_equal(const Program& a, const Program& b) {
    if (a.params != b.params || a.size_name != b.size_name) return false;
    if (a.variables.size() != b.variables.size() || a.components.size() != b.components.size()) return false;
    for (std::size_t i = 0; i < a.variables.size(); ++i) {
        const auto& va = a.variables[i];
        const auto& vb = b.variables[i];
        if (va.name != vb.name || va.kind != vb.kind || va.domain != vb.domain) return false;
        if (!structurally_equal(va.init, vb.init)) return false;
    }
    for (std::size_t i = 0; i < a.components.size(); ++i) {
        const auto& ca = a.components[i];
        const auto& cb = b.components[i];
        if (ca.name != cb.name || ca.actions.size() != cb.actions.size()) return false;
        for (std::size_t j = 0; j < ca.actions.size(); ++j)
            if (!structurally_equal(ca.actions[j], cb.actions[j])) return false;
    }
    return a.network() == b.network();
}

} // namespace hypops
