#pragma once

// Exact stochastic simulation of a population model: guarded race between
// exponential events, vanishing-state resolution of instantaneous actions
// (selection proportional to weight, no time advance) and deterministic
// scheduling of timed guards between jumps.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hypops/compiled.hpp"
#include "hypops/errors.hpp"
#include "hypops/program.hpp"
#include "hypops/random_spec.hpp"
#include "hypops/rng.hpp"

namespace hypops {

struct CtmcState {
    std::vector<double> values; // program slot order
    double time = 0.0;
};

enum class EventKind { Stochastic, Instantaneous, Timed };

struct EventRecord {
    double time = 0.0;
    int action = -1; // index into SimModel::action_names
    EventKind kind = EventKind::Stochastic;
    int chain_index = 0;                          // position within an instantaneous chain
    std::vector<std::pair<int, double>> delta;    // slot -> new value (sparse)
    std::vector<double> pre_state, post_state;    // only with dense recording
};

struct SeedProvenance {
    std::uint64_t root = 0;
    std::uint64_t experiment = 0;
    std::uint64_t replicate = 0;
};

struct Trajectory {
    CtmcState initial;
    std::vector<EventRecord> events;
    double horizon = 0.0;
    CtmcState final_state;
    SeedProvenance seeds;
    long long event_count = 0;
    long long negative_rate_clamps = 0;
};

// ---------------------------------------------------------------------------
// Compiled simulation model

struct CompiledUpdate {
    int slot = -1;
    bool set = false;
    CompiledExpr base;
    const RandomSpec* random = nullptr; // borrowed from the owning Program
    double sign = 1.0;
    CompiledExpr random_scale;
    bool integer_target = false;
};

struct CompiledReset {
    std::vector<CompiledUpdate> updates;
    bool has_random = false;
};

struct CompiledStochastic {
    int action = -1;
    std::string name;
    ActionClass cls = ActionClass::Discrete;
    CompiledGuard guard;
    CompiledExpr rate;
    CompiledReset reset;
};

struct CompiledInstantaneous {
    int action = -1;
    std::string name;
    CompiledGuard guard;          // full guard, timed conjunct included
    std::optional<CompiledExpr> timed_h0; // activation instant for the time conjunct
    CompiledGuard untimed_rest;   // guard without the time conjunct
    CompiledExpr weight;
    CompiledReset reset;
};

class SimModel {
  public:
    // `size` binds the size symbol for raw or at-size programs; pass nullopt
    // for limit-normalized programs (which reference no size symbol).
    SimModel(const Program& program, std::optional<double> size)
        : prog_(program), size_(size) {
        tables_.program = &prog_;
        tables_.moves_continuously.assign(prog_.variables.size(), false);
        // in the jump-process semantics nothing moves between events
        ExprCompiler compiler(tables_);

        Env penv = prog_.param_env();
        if (size) penv.size_n = *size;
        init_.resize(prog_.variables.size());
        for (std::size_t i = 0; i < prog_.variables.size(); ++i) {
            const auto& v = prog_.variables[i];
            double x = eval_expr(v.init, penv);
            if (v.domain == VarDomain::Integer) {
                double r = std::llround(x);
                if (std::fabs(r - x) > 1e-9 && !contains_size_symbol(v.init))
                    throw DomainViolation("initial value of '" + v.name + "' is not an integer");
                x = r;
            }
            init_[i] = x;
        }

        std::size_t action_total = 0;
        for (const auto& comp : prog_.components)
            action_total += comp.actions.size();
        if (action_total > 256)
            throw ValidationFailed("model exceeds the 256-action engine limit");

        int action_idx = 0;
        for (const auto& comp : prog_.components) {
            for (const auto& act : comp.actions) {
                action_names_.push_back(act.name);
                if (act.kind == ActionKind::Stochastic) {
                    CompiledStochastic cs;
                    cs.action = action_idx;
                    cs.name = act.name;
                    cs.cls = act.cls;
                    cs.guard = compiler.compile(act.guard);
                    cs.rate = compiler.compile(act.rate_or_weight);
                    cs.reset = compile_reset(compiler, act.reset);
                    stochastic_.push_back(std::move(cs));
                } else {
                    CompiledInstantaneous ci;
                    ci.action = action_idx;
                    ci.name = act.name;
                    ci.guard = compiler.compile(act.guard);
                    detail::TimedGuardSplit split;
                    if (!detail::split_timed_guard(act.guard, split))
                        throw ValidationFailed("malformed timed guard in '" + act.name + "'");
                    if (split.h0)
                        ci.timed_h0 = compiler.compile(*split.h0);
                    ci.untimed_rest = compiler.compile(split.rest);
                    ci.weight = compiler.compile(act.rate_or_weight);
                    ci.reset = compile_reset(compiler, act.reset);
                    instantaneous_.push_back(std::move(ci));
                }
                ++action_idx;
            }
        }
    }

    const Program& program() const { return prog_; }
    std::optional<double> size() const { return size_; }
    const std::vector<double>& initial_values() const { return init_; }
    const std::vector<std::string>& action_names() const { return action_names_; }
    const std::vector<CompiledStochastic>& stochastic() const { return stochastic_; }
    const std::vector<CompiledInstantaneous>& instantaneous() const { return instantaneous_; }

    EvalCtx ctx(const CtmcState& s) const {
        EvalCtx c;
        c.values = s.values.data();
        c.time = s.time;
        c.size = size_ ? &*size_ : nullptr;
        return c;
    }

    CtmcState initial_state() const {
        CtmcState s;
        s.values = init_;
        s.time = 0.0;
        return s;
    }

    // Env bridge for RandomSpec sampling (parameters may reference names).
    Env env_at(const CtmcState& s) const {
        Env env = prog_.param_env();
        for (std::size_t i = 0; i < prog_.variables.size(); ++i)
            env.values[prog_.variables[i].name] = s.values[i];
        env.time = s.time;
        if (size_) env.size_n = *size_;
        return env;
    }

  private:
    CompiledReset compile_reset(const ExprCompiler& compiler, const Reset& reset) {
        CompiledReset out;
        for (const auto& u : reset.updates) {
            CompiledUpdate cu;
            cu.slot = prog_.var_index(u.target);
            if (cu.slot < 0) throw UnboundVariable("reset target '" + u.target + "'");
            cu.set = u.set;
            cu.base = compiler.compile(u.base);
            cu.random = u.random ? &u.random.value() : nullptr;
            cu.sign = u.sign;
            cu.random_scale = compiler.compile(u.random_scale);
            cu.integer_target = prog_.variables[cu.slot].domain == VarDomain::Integer;
            if (cu.random) out.has_random = true;
            out.updates.push_back(std::move(cu));
        }
        return out;
    }

    Program prog_;
    std::optional<double> size_;
    CompileTables tables_;
    std::vector<double> init_;
    std::vector<std::string> action_names_;
    std::vector<CompiledStochastic> stochastic_;
    std::vector<CompiledInstantaneous> instantaneous_;
};

// ---------------------------------------------------------------------------
// Reset application (simultaneous semantics: all rhs in the pre-state)

namespace detail {

inline void apply_reset(const SimModel& model, const CompiledReset& reset, CtmcState& s, SplitRng& rng,
                        const std::string& action_name, std::vector<std::pair<int, double>>* delta_out) {
    EvalCtx ctx = model.ctx(s);
    // evaluate every rhs against the pre-state first
    double staged[64];
    std::size_t n = reset.updates.size();
    if (n > 64) throw Error("reset too wide");
    std::optional<Env> env; // built lazily, only for random draws
    for (std::size_t i = 0; i < n; ++i) {
        const CompiledUpdate& u = reset.updates[i];
        double rhs = u.base.eval(ctx);
        if (u.random) {
            if (!env) env = model.env_at(s);
            double draw = sample_random(*u.random, *env, rng);
            rhs += u.sign * u.random_scale.eval(ctx) * draw;
        }
        staged[i] = rhs;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const CompiledUpdate& u = reset.updates[i];
        double value = u.set ? staged[i] : s.values[u.slot] + staged[i];
        if (u.integer_target) {
            double r = std::llround(value);
            if (std::fabs(r - value) > 1e-9)
                throw DomainViolation("action '" + action_name + "' drives integer variable to " +
                                      std::to_string(value));
            value = r;
        }
        s.values[u.slot] = value;
        if (delta_out) delta_out->emplace_back(u.slot, value);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Engine operations

inline std::vector<std::pair<const CompiledStochastic*, double>> enabled_stochastic(const SimModel& model,
                                                                                    const CtmcState& s) {
    std::vector<std::pair<const CompiledStochastic*, double>> out;
    EvalCtx ctx = model.ctx(s);
    for (const auto& a : model.stochastic()) {
        if (!a.guard.eval(ctx)) continue;
        double r = a.rate.eval(ctx);
        if (r > 0.0) out.emplace_back(&a, r);
    }
    return out;
}

struct SimOptions {
    int max_chain = 1; // chain-free by default
    bool record_events = true;
    bool dense = false;           // store full pre/post states per event
    long long max_events = -1;    // safety valve, < 0 means unlimited
    int stop_after_action = -1;   // finish once this action index fired
};

namespace detail {

struct ChainResult {
    int fired = 0;
    bool stopped = false;
};

template <class Observer>
inline ChainResult resolve_instantaneous_impl(const SimModel& model, CtmcState& s, SplitRng& rng, int max_chain,
                                              Trajectory* traj, const SimOptions& opts, Observer&& observer) {
    ChainResult res;
    while (true) {
        EvalCtx ctx = model.ctx(s);
        double total = 0.0;
        double weights[128];
        const CompiledInstantaneous* enabled[128];
        int n = 0;
        for (const auto& a : model.instantaneous()) {
            if (!a.guard.eval(ctx)) continue;
            double w = a.weight.eval(ctx);
            if (w < 0) w = 0;
            if (n < 128) {
                weights[n] = w;
                enabled[n] = &a;
                ++n;
                total += w;
            }
        }
        if (n == 0) return res;
        if (res.fired >= max_chain)
            throw ChainLimitExceeded("more than " + std::to_string(max_chain) +
                                     " instantaneous firings at one time instant");
        if (total <= 0.0) throw ZeroTotalWeight("all active instantaneous weights vanish");
        double u = rng.uniform01() * total;
        int pick = n - 1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += weights[i];
            if (u <= acc) {
                pick = i;
                break;
            }
        }
        const CompiledInstantaneous& a = *enabled[pick];
        EventRecord rec;
        bool want_record = traj && opts.record_events;
        rec.time = s.time;
        rec.action = a.action;
        rec.kind = a.timed_h0 ? EventKind::Timed : EventKind::Instantaneous;
        rec.chain_index = res.fired;
        if (want_record && opts.dense) rec.pre_state = s.values;
        detail::apply_reset(model, a.reset, s, rng, a.name, want_record ? &rec.delta : nullptr);
        if (want_record && opts.dense) rec.post_state = s.values;
        observer(s, a.action, rec.kind);
        if (want_record) traj->events.push_back(std::move(rec));
        if (traj) ++traj->event_count;
        ++res.fired;
        if (opts.stop_after_action == a.action) {
            res.stopped = true;
            return res;
        }
    }
}

} // namespace detail

inline int resolve_instantaneous(const SimModel& model, CtmcState& s, SplitRng& rng, int max_chain,
                                 Trajectory* traj = nullptr) {
    SimOptions opts;
    opts.max_chain = max_chain;
    opts.record_events = traj != nullptr;
    return detail::resolve_instantaneous_impl(model, s, rng, max_chain, traj, opts,
                                              [](const CtmcState&, int, EventKind) {})
        .fired;
}

// Between jumps the state is constant, so the activation instant of every
// timed guard is known in closed form: max(now, h0(s)) over the actions
// whose non-time conjunct holds now.
inline std::optional<double> next_timed_activation(const SimModel& model, const CtmcState& s) {
    std::optional<double> best;
    EvalCtx ctx = model.ctx(s);
    for (const auto& a : model.instantaneous()) {
        if (!a.timed_h0) continue;
        if (!a.untimed_rest.eval(ctx)) continue;
        double at = std::max(s.time, a.timed_h0->eval(ctx));
        if (!best || at < *best) best = at;
    }
    return best;
}

template <class Observer>
inline Trajectory simulate_ctmc(const SimModel& model, const CtmcState& s0, double horizon, SplitRng& rng,
                                const SimOptions& opts, Observer&& observer) {
    Trajectory traj;
    traj.initial = s0;
    traj.horizon = horizon;

    CtmcState s = s0;
    // resolve any initially-vanishing state
    auto chain =
        detail::resolve_instantaneous_impl(model, s, rng, opts.max_chain, &traj, opts, observer);
    bool stopped = chain.stopped;

    while (!stopped && s.time < horizon) {
        if (opts.max_events >= 0 && traj.event_count >= opts.max_events) break;

        EvalCtx ctx = model.ctx(s);
        double total = 0.0;
        double rates[256];
        const CompiledStochastic* acts[256];
        int n = 0;
        for (const auto& a : model.stochastic()) {
            if (!a.guard.eval(ctx)) continue;
            double r = a.rate.eval(ctx);
            if (r < 0.0) {
                ++traj.negative_rate_clamps;
                r = 0.0;
            }
            if (r > 0.0 && n < 256) {
                rates[n] = r;
                acts[n] = &a;
                ++n;
                total += r;
            }
        }

        double t_stoch = total > 0.0 ? s.time + rng.exp1() / total
                                     : std::numeric_limits<double>::infinity();
        std::optional<double> t_timed = next_timed_activation(model, s);

        if (t_timed && *t_timed <= t_stoch) {
            if (*t_timed >= horizon) break;
            s.time = std::max(s.time, *t_timed);
            auto c = detail::resolve_instantaneous_impl(model, s, rng, opts.max_chain, &traj, opts, observer);
            stopped = c.stopped;
            continue;
        }
        if (t_stoch >= horizon || n == 0) break;

        // pick the firing action proportionally to its rate
        double u = rng.uniform01() * total;
        int pick = n - 1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += rates[i];
            if (u <= acc) {
                pick = i;
                break;
            }
        }
        const CompiledStochastic& a = *acts[pick];
        s.time = t_stoch;
        EventRecord rec;
        rec.time = s.time;
        rec.action = a.action;
        rec.kind = EventKind::Stochastic;
        if (opts.record_events && opts.dense) rec.pre_state = s.values;
        detail::apply_reset(model, a.reset, s, rng, a.name, opts.record_events ? &rec.delta : nullptr);
        if (opts.record_events && opts.dense) rec.post_state = s.values;
        observer(s, a.action, EventKind::Stochastic);
        if (opts.record_events) traj.events.push_back(std::move(rec));
        ++traj.event_count;
        if (opts.stop_after_action == a.action) break;

        auto c = detail::resolve_instantaneous_impl(model, s, rng, opts.max_chain, &traj, opts, observer);
        stopped = c.stopped;
    }

    if (!stopped && s.time < horizon) s.time = horizon;
    traj.final_state = s;
    return traj;
}

inline Trajectory simulate_ctmc(const SimModel& model, const CtmcState& s0, double horizon, SplitRng& rng,
                                const SimOptions& opts = {}) {
    return simulate_ctmc(model, s0, horizon, rng, opts, [](const CtmcState&, int, EventKind) {});
}

} // namespace hypops
