#pragma once

// Executable piecewise-deterministic process assembled from a transition
// automaton: per-mode vector field, aggregated jump rate with survivor-based
// jump sampling, boundary-hit detection for instantaneous guards (including
// tangential touches), piecewise-smooth flows with Filippov sliding, and
// runtime diagnostics for the convergence hypotheses.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hypops/compiled.hpp"
#include "hypops/ctmc.hpp"
#include "hypops/errors.hpp"
#include "hypops/ode.hpp"
#include "hypops/tdsha.hpp"

namespace hypops {

// ---------------------------------------------------------------------------
// Pure Filippov helpers

enum class ContactClass { Transversal, StableSliding, UnstableSliding, Tangential };

inline const char* to_string(ContactClass c) {
    switch (c) {
    case ContactClass::Transversal: return "transversal";
    case ContactClass::StableSliding: return "stable_sliding";
    case ContactClass::UnstableSliding: return "unstable_sliding";
    case ContactClass::Tangential: return "tangential";
    }
    return "?";
}

// nF1/nF2 are the normal components of the fields on the h>0 / h<0 sides,
// with the normal pointing into the h>0 region.
inline ContactClass classify_surface_contact(double nF1, double nF2, double tol) {
    if (std::fabs(nF1) <= tol || std::fabs(nF2) <= tol) return ContactClass::Tangential;
    if (nF1 < 0 && nF2 > 0) return ContactClass::StableSliding;
    if (nF1 > 0 && nF2 < 0) return ContactClass::UnstableSliding;
    return ContactClass::Transversal;
}

struct SlidingField {
    std::vector<double> G;
    double alpha = 0;
};

inline SlidingField sliding_field(const std::vector<double>& F1, const std::vector<double>& F2,
                                  const std::vector<double>& n, double tol = 1e-12) {
    double nF1 = 0, nF2 = 0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        nF1 += n[i] * F1[i];
        nF2 += n[i] * F2[i];
    }
    double gap = nF2 - nF1;
    if (!(gap > tol))
        throw DegenerateSliding("sliding denominator nF2 - nF1 is not positive");
    SlidingField out;
    out.alpha = nF2 / gap;
    out.G.resize(F1.size());
    for (std::size_t i = 0; i < F1.size(); ++i)
        out.G[i] = out.alpha * F1[i] + (1.0 - out.alpha) * F2[i];
    return out;
}

// ---------------------------------------------------------------------------
// Assembled model

struct SurfaceForce {
    int surface = -1;
    int side = 0; // +1: canonical h > 0 branch
};

namespace pdmp_detail {

// Guard tree with per-atom surface tags so the field can be evaluated on a
// chosen side of a discontinuity surface.
struct TaggedGuard {
    CompiledGuard::Kind kind = CompiledGuard::Kind::True;
    CompiledExpr atom_lhs;
    bool strict = false;
    bool flow_constant = false;
    int surface = -1;
    int orientation = 1;
    std::vector<TaggedGuard> children;

    bool eval(const EvalCtx& ctx, const std::vector<SurfaceForce>& forces) const {
        switch (kind) {
        case CompiledGuard::Kind::True: return true;
        case CompiledGuard::Kind::Atom: {
            if (surface >= 0)
                for (const auto& f : forces)
                    if (f.surface == surface) return f.side * orientation > 0;
            double v = atom_lhs.eval(ctx);
            return strict ? v > 0.0 : v >= 0.0;
        }
        case CompiledGuard::Kind::And:
            for (const auto& c : children)
                if (!c.eval(ctx, forces)) return false;
            return true;
        case CompiledGuard::Kind::Or:
            for (const auto& c : children)
                if (c.eval(ctx, forces)) return true;
            return false;
        }
        return false;
    }

    double activation(const EvalCtx& ctx) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (kind) {
        case CompiledGuard::Kind::True: return inf;
        case CompiledGuard::Kind::Atom: {
            double v = atom_lhs.eval(ctx);
            if (flow_constant) return (strict ? v > 0.0 : v >= 0.0) ? inf : -inf;
            return v;
        }
        case CompiledGuard::Kind::And: {
            double m = inf;
            for (const auto& c : children)
                m = std::min(m, c.activation(ctx));
            return m;
        }
        case CompiledGuard::Kind::Or: {
            double m = -inf;
            for (const auto& c : children)
                m = std::max(m, c.activation(ctx));
            return m;
        }
        }
        return -inf;
    }
};

// canonical orientation of an atom expression: a surface and its mirrored
// form (b - a vs a - b) are one discontinuity manifold
inline Expr flip_expr(const Expr& e) {
    if (e.op == ExprOp::Sub) return sub(e.args[1], e.args[0]);
    if (e.op == ExprOp::Neg) return e.args[0];
    return neg(e);
}

} // namespace pdmp_detail

struct PdmpSurface {
    std::string key;       // canonical printed form
    Expr h_expr;           // canonical orientation
    CompiledExpr h;
    bool from_flow = false;       // appears in some flow guard
    bool from_stochastic = false; // appears in some stochastic guard
};

struct PdmpFlow {
    std::string name;
    pdmp_detail::TaggedGuard guard;
    CompiledExpr rate;
    std::vector<std::pair<int, CompiledExpr>> increments;
};

struct PdmpStochastic {
    std::string name;
    pdmp_detail::TaggedGuard guard;
    CompiledExpr rate;
    CompiledReset reset;
};

struct PdmpInstantaneous {
    std::string name;
    pdmp_detail::TaggedGuard guard; // includes the timed conjunct when present
    CompiledExpr weight;
    CompiledReset reset;
    bool timed = false;
};

class PdmpModel {
  public:
    explicit PdmpModel(Tdsha t) : tdsha_(std::move(t)) {
        const Program& p = tdsha_.program;
        n_vars_ = static_cast<int>(p.variables.size());
        time_slot_ = tdsha_.uses_time ? n_vars_ : -1;
        n_state_ = n_vars_ + (tdsha_.uses_time ? 1 : 0);
        lambda_slot_ = n_state_; // appended cumulative-rate component

        tables_.program = &prog_storage();
        tables_.moves_continuously.assign(static_cast<std::size_t>(n_vars_), false);
        for (int s : tdsha_.continuous_slots)
            tables_.moves_continuously[static_cast<std::size_t>(s)] = true;
        ExprCompiler compiler(tables_);

        for (const auto& tc : tdsha_.tc) {
            PdmpFlow f;
            f.name = tc.name;
            f.guard = compile_tagged(compiler, tc.guard, /*register_surfaces=*/true, /*stochastic=*/false);
            f.rate = compiler.compile(tc.rate);
            for (const auto& [slot, inc] : tc.increments) {
                if (p.variables[static_cast<std::size_t>(slot)].kind != VarKind::Continuous)
                    throw ValidationFailed("flow increment touches non-continuous variable");
                f.increments.emplace_back(slot, compiler.compile(inc));
            }
            flows_.push_back(std::move(f));
        }
        for (const auto& ts : tdsha_.ts) {
            PdmpStochastic s;
            s.name = ts.name;
            s.guard = compile_tagged(compiler, ts.guard, /*register_surfaces=*/true, /*stochastic=*/true);
            bool moving_guard = guard_has_surface(s.guard);
            if (moving_guard)
                notes_.push_back("stochastic transition '" + ts.name +
                                 "' is guarded by continuous variables; rate integration switches branch at the surface");
            s.rate = compiler.compile(ts.rate);
            s.reset = compile_reset(compiler, ts.reset);
            stochastic_.push_back(std::move(s));
        }
        for (const auto& td : tdsha_.td) {
            PdmpInstantaneous i;
            i.name = td.name;
            i.guard = compile_tagged(compiler, td.guard, /*register_surfaces=*/false, false);
            i.weight = compiler.compile(td.weight);
            i.reset = compile_reset(compiler, td.reset);
            i.timed = td.timed_h0.has_value();
            instantaneous_.push_back(std::move(i));
        }
        for (const auto& f : flows_)
            if (guard_has_surface(f.guard)) {
                notes_.push_back("flow '" + f.name + "' is guarded by continuous variables; "
                                 "its surfaces enter the piecewise-smooth bookkeeping");
                break;
            }

        // initial state
        Env penv = p.param_env();
        if (p.mode == ProgramMode::AtSize) penv.size_n = p.bound_size;
        init_.assign(static_cast<std::size_t>(n_state_ + 1), 0.0);
        for (int i = 0; i < n_vars_; ++i)
            init_[static_cast<std::size_t>(i)] = eval_expr(p.variables[static_cast<std::size_t>(i)].init, penv);
    }

    const Tdsha& tdsha() const { return tdsha_; }
    const Program& program() const { return tdsha_.program; }
    int n_vars() const { return n_vars_; }
    int n_state() const { return n_state_; }
    int time_slot() const { return time_slot_; }
    int lambda_slot() const { return lambda_slot_; }
    const std::vector<double>& initial_state() const { return init_; }
    const std::vector<PdmpFlow>& flows() const { return flows_; }
    const std::vector<PdmpStochastic>& stochastic() const { return stochastic_; }
    const std::vector<PdmpInstantaneous>& instantaneous() const { return instantaneous_; }
    const std::vector<PdmpSurface>& surfaces() const { return surfaces_; }
    const std::vector<std::string>& notes() const { return notes_; }
    bool has_time_monitor() const { return time_slot_ >= 0; }

    EvalCtx ctx(const double* y, double t) const {
        EvalCtx c;
        c.values = y;
        c.time = t;
        c.size = program().mode == ProgramMode::AtSize ? &size_value() : nullptr;
        return c;
    }

    // drift of the continuous components; dydt must hold n_state() slots
    void vector_field(const double* y, double t, double* dydt,
                      const std::vector<SurfaceForce>& forces) const {
        for (int i = 0; i < n_state_; ++i)
            dydt[i] = 0.0;
        EvalCtx c = ctx(y, t);
        for (const auto& f : flows_) {
            if (!f.guard.eval(c, forces)) continue;
            double r = f.rate.eval(c);
            if (r == 0.0) continue;
            for (const auto& [slot, inc] : f.increments)
                dydt[slot] += r * inc.eval(c);
        }
        if (time_slot_ >= 0) dydt[time_slot_] = 1.0;
    }

    // aggregated stochastic jump rate; negative transition rates clamp to 0
    double jump_rate(const double* y, double t, long long* clamped) const {
        EvalCtx c = ctx(y, t);
        double acc = 0;
        for (const auto& s : stochastic_) {
            if (!s.guard.eval(c, {})) continue;
            double r = s.rate.eval(c);
            if (r < 0) {
                if (clamped) ++*clamped;
                continue;
            }
            acc += r;
        }
        return acc;
    }

    Env env_at(const double* y, double t) const {
        Env env = program().param_env();
        for (int i = 0; i < n_vars_; ++i)
            env.values[program().variables[static_cast<std::size_t>(i)].name] = y[i];
        env.time = t;
        if (program().mode == ProgramMode::AtSize) env.size_n = program().bound_size;
        return env;
    }

  private:
    const Program& prog_storage() const { return tdsha_.program; }
    const double& size_value() const { return tdsha_.program.bound_size; }

    static bool guard_has_surface(const pdmp_detail::TaggedGuard& g) {
        if (g.kind == CompiledGuard::Kind::Atom) return g.surface >= 0;
        for (const auto& c : g.children)
            if (guard_has_surface(c)) return true;
        return false;
    }

    pdmp_detail::TaggedGuard compile_tagged(const ExprCompiler& compiler, const Guard& g, bool register_surfaces,
                                            bool stochastic) {
        pdmp_detail::TaggedGuard out;
        switch (g.kind) {
        case Guard::Kind::True: out.kind = CompiledGuard::Kind::True; break;
        case Guard::Kind::Atom: {
            out.kind = CompiledGuard::Kind::Atom;
            out.atom_lhs = compiler.compile(g.atom.lhs);
            out.strict = g.atom.strict;
            out.flow_constant = !compiler.expr_moves(g.atom.lhs);
            if (!out.flow_constant && register_surfaces && !contains_time(g.atom.lhs)) {
                auto [id, orient] = register_surface(compiler, g.atom.lhs, stochastic);
                out.surface = id;
                out.orientation = orient;
            }
            break;
        }
        case Guard::Kind::And:
        case Guard::Kind::Or:
            out.kind = g.kind == Guard::Kind::And ? CompiledGuard::Kind::And : CompiledGuard::Kind::Or;
            for (const auto& c : g.children)
                out.children.push_back(compile_tagged(compiler, c, register_surfaces, stochastic));
            break;
        }
        return out;
    }

    std::pair<int, int> register_surface(const ExprCompiler& compiler, const Expr& lhs, bool stochastic) {
        Expr folded = fold_constants(lhs);
        Expr flipped = fold_constants(pdmp_detail::flip_expr(folded));
        std::string s0 = to_string(folded);
        std::string s1 = to_string(flipped);
        int orient = s0 <= s1 ? +1 : -1;
        const Expr& canonical = orient > 0 ? folded : flipped;
        std::string key = orient > 0 ? s0 : s1;
        for (std::size_t i = 0; i < surfaces_.size(); ++i)
            if (surfaces_[i].key == key) {
                if (stochastic)
                    surfaces_[i].from_stochastic = true;
                else
                    surfaces_[i].from_flow = true;
                return {static_cast<int>(i), orient};
            }
        PdmpSurface s;
        s.key = key;
        s.h_expr = canonical;
        s.h = compiler.compile(canonical);
        s.from_flow = !stochastic;
        s.from_stochastic = stochastic;
        surfaces_.push_back(std::move(s));
        return {static_cast<int>(surfaces_.size()) - 1, orient};
    }

    CompiledReset compile_reset(const ExprCompiler& compiler, const Reset& reset) {
        CompiledReset out;
        const Program& p = tdsha_.program;
        for (const auto& u : reset.updates) {
            CompiledUpdate cu;
            cu.slot = p.var_index(u.target);
            if (cu.slot < 0) throw UnboundVariable("reset target '" + u.target + "'");
            cu.set = u.set;
            cu.base = compiler.compile(u.base);
            cu.random = u.random ? &u.random.value() : nullptr;
            cu.sign = u.sign;
            cu.random_scale = compiler.compile(u.random_scale);
            cu.integer_target = p.variables[static_cast<std::size_t>(cu.slot)].domain == VarDomain::Integer;
            if (cu.random) out.has_random = true;
            out.updates.push_back(std::move(cu));
        }
        return out;
    }

    Tdsha tdsha_;
    int n_vars_ = 0, n_state_ = 0, time_slot_ = -1, lambda_slot_ = 0;
    CompileTables tables_;
    std::vector<double> init_;
    std::vector<PdmpFlow> flows_;
    std::vector<PdmpStochastic> stochastic_;
    std::vector<PdmpInstantaneous> instantaneous_;
    std::vector<PdmpSurface> surfaces_;
    std::vector<std::string> notes_;
};

inline PdmpModel assemble_pdmp(Tdsha t) { return PdmpModel(std::move(t)); }

// ---------------------------------------------------------------------------
// Simulation records

struct PdmpJumpRecord {
    double t = 0;
    enum class Kind { Stochastic, Boundary } kind = Kind::Stochastic;
    int transition = -1;
    std::string name;
    std::vector<double> pre, post;
    double margin = 0;          // d/dt h at a boundary firing
    bool tangential = false;
    bool multi_guard = false;   // >= 2 activations within tol_act at firing
};

struct SlideRecord {
    int surface = -1;
    std::string key;
    double t_enter = 0, t_exit = 0;
    std::string exit_reason; // "field1_tangential", "field2_tangential", "jump", "horizon"
    double max_abs_h = 0;
    double alpha_min = 1, alpha_max = 0;
};

struct PdmpDiagnostics {
    long long stochastic_jumps = 0;
    long long boundary_jumps = 0;
    long long tangential_contacts = 0;
    long long surface_crossings = 0;
    long long negative_rate_clamps = 0;
    std::map<std::string, double> ts_surface_dwell; // fraction of time within tol_act of a stochastic guard surface
    double elapsed = 0;
};

struct PdmpTrajectory {
    std::vector<double> initial;
    std::vector<std::pair<double, std::vector<double>>> samples; // state at requested times
    std::vector<PdmpJumpRecord> jumps;
    std::vector<SlideRecord> slides;
    PdmpDiagnostics diagnostics;
    std::vector<double> final_state;
    double final_time = 0;
};

struct PdmpOptions {
    OdeOptions ode;
    double event_tol = 1e-9;   // event-time localization tolerance
    double touch_tol = 1e-9;   // boundary firing threshold for tangential touches
    double tol_act = 1e-7;     // activation proximity (kernel eligibility, diagnostics)
    double tang_rel = 1e-4;    // tangential margin, relative to the segment's |dh/dt| scale
    double slide_dt = 1e-3;
    double slide_tol = 1e-6;
    double zeno_jumps_per_unit = 1e4;
    int chatter_contacts = 1000;
    double chatter_window = 1e-6;
    std::vector<double> sample_times; // sorted observation grid
    int scan_points = 16;             // event samples per accepted step
};

// ---------------------------------------------------------------------------
// Runner

namespace pdmp_detail {

struct Candidate {
    enum class Type { None, Stochastic, Boundary, Surface } type = Type::None;
    double t = std::numeric_limits<double>::infinity();
    int index = -1;
    bool touch = false; // boundary located by a tangential touch
};

} // namespace pdmp_detail

class PdmpRunner {
  public:
    PdmpRunner(const PdmpModel& model, SplitRng& rng, const PdmpOptions& opts)
        : m_(model), rng_(rng), o_(opts) {}

    PdmpTrajectory run(double horizon) {
        horizon_ = horizon;
        y_ = m_.initial_state();
        t_ = 0;
        traj_ = PdmpTrajectory{};
        traj_.initial.assign(y_.begin(), y_.begin() + m_.n_state());
        next_sample_ = 0;
        record_due_samples(); // samples at t = 0

        resolve_initial_boundary();

        while (t_ < horizon_ - 1e-15) {
            xi_ = rng_.exp1();
            y_[static_cast<std::size_t>(m_.lambda_slot())] = 0.0;
            auto ev = integrate_to_event();
            if (ev.type == pdmp_detail::Candidate::Type::None) break; // horizon
            if (ev.type == pdmp_detail::Candidate::Type::Stochastic)
                jump_stochastic();
            else
                jump_boundary(ev.index, ev.touch, ev.margin_value, ev.margin_scale);
            note_jump_for_zeno();
        }
        record_due_samples();
        traj_.final_state.assign(y_.begin(), y_.begin() + m_.n_state());
        traj_.final_time = t_;
        traj_.diagnostics.elapsed = t_;
        for (auto& [key, acc] : dwell_accum_)
            traj_.diagnostics.ts_surface_dwell[key] = t_ > 0 ? acc / t_ : 0.0;
        return traj_;
    }

  private:
    struct EventOut : pdmp_detail::Candidate {
        double margin_value = 0;
        double margin_scale = 1;
    };

    // --- state access helpers

    EvalCtx ctx_at(const double* y, double t) const { return m_.ctx(y, t); }

    double activation(const PdmpInstantaneous& td, const double* y, double t) const {
        return td.guard.activation(ctx_at(y, t));
    }

    // --- initial boundary resolution (mirrors vanishing-state handling)

    void resolve_initial_boundary() {
        EvalCtx c = ctx_at(y_.data(), t_);
        for (const auto& td : m_.instantaneous()) {
            // an initial state within the activation tolerance counts as on
            // the boundary, matching the kernel's own eligibility rule
            if (td.guard.activation(c) >= -o_.tol_act) {
                jump_boundary(-1, false, 0.0, 1.0);
                note_jump_for_zeno();
                return; // chain-free: the post-jump check forbids a second firing
            }
        }
    }

    // --- jumps

    void jump_stochastic() {
        EvalCtx c = ctx_at(y_.data(), t_);
        double total = 0;
        std::vector<double> rates(m_.stochastic().size(), 0.0);
        for (std::size_t i = 0; i < m_.stochastic().size(); ++i) {
            const auto& s = m_.stochastic()[i];
            if (!s.guard.eval(c, {})) continue;
            double r = s.rate.eval(c);
            if (r > 0) {
                rates[i] = r;
                total += r;
            }
        }
        if (total <= 0)
            throw Error("stochastic jump localized where no transition is active");
        double u = rng_.uniform01() * total;
        std::size_t pick = rates.size() - 1;
        double acc = 0;
        for (std::size_t i = 0; i < rates.size(); ++i) {
            acc += rates[i];
            if (rates[i] > 0 && u <= acc) {
                pick = i;
                break;
            }
        }
        PdmpJumpRecord rec;
        rec.t = t_;
        rec.kind = PdmpJumpRecord::Kind::Stochastic;
        rec.transition = static_cast<int>(pick);
        rec.name = m_.stochastic()[pick].name;
        rec.pre.assign(y_.begin(), y_.begin() + m_.n_state());
        apply_reset(m_.stochastic()[pick].reset, m_.stochastic()[pick].name);
        rec.post.assign(y_.begin(), y_.begin() + m_.n_state());
        check_open_state(m_.stochastic()[pick].name);
        ++traj_.diagnostics.stochastic_jumps;
        traj_.jumps.push_back(std::move(rec));
    }

    void jump_boundary(int hint_index, bool touch, double margin, double scale) {
        EvalCtx c = ctx_at(y_.data(), t_);
        double total = 0;
        int active = 0;
        std::vector<double> weights(m_.instantaneous().size(), -1.0);
        for (std::size_t i = 0; i < m_.instantaneous().size(); ++i) {
            if (m_.instantaneous()[i].guard.activation(c) < -o_.tol_act) continue;
            double w = m_.instantaneous()[i].weight.eval(c);
            weights[i] = std::max(w, 0.0);
            total += weights[i];
            ++active;
        }
        if (active == 0 && hint_index >= 0) {
            // the localized activation sits just under the threshold; use it
            weights[static_cast<std::size_t>(hint_index)] = 1.0;
            total = 1.0;
            active = 1;
        }
        if (active == 0)
            throw Error("boundary event localized with no active instantaneous transition");
        if (total <= 0)
            throw ZeroTotalWeight("total weight of active instantaneous transitions vanishes");
        double u = rng_.uniform01() * total;
        std::size_t pick = 0;
        double acc = 0;
        bool chosen = false;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] < 0) continue;
            acc += weights[i];
            if (u <= acc) {
                pick = i;
                chosen = true;
                break;
            }
        }
        if (!chosen) {
            for (std::size_t i = weights.size(); i-- > 0;)
                if (weights[i] >= 0) {
                    pick = i;
                    break;
                }
        }
        PdmpJumpRecord rec;
        rec.t = t_;
        rec.kind = PdmpJumpRecord::Kind::Boundary;
        rec.transition = static_cast<int>(pick);
        rec.name = m_.instantaneous()[pick].name;
        rec.pre.assign(y_.begin(), y_.begin() + m_.n_state());
        rec.margin = margin;
        rec.tangential = touch || std::fabs(margin) < o_.tang_rel * std::max(scale, 1e-300);
        rec.multi_guard = active >= 2;
        if (rec.tangential) ++traj_.diagnostics.tangential_contacts;
        apply_reset(m_.instantaneous()[pick].reset, m_.instantaneous()[pick].name);
        rec.post.assign(y_.begin(), y_.begin() + m_.n_state());
        check_open_state(m_.instantaneous()[pick].name);
        ++traj_.diagnostics.boundary_jumps;
        traj_.jumps.push_back(std::move(rec));
    }

    void apply_reset(const CompiledReset& reset, const std::string& name) {
        EvalCtx c = ctx_at(y_.data(), t_);
        double staged[64];
        std::size_t n = reset.updates.size();
        if (n > 64) throw Error("reset too wide");
        std::optional<Env> env;
        for (std::size_t i = 0; i < n; ++i) {
            const CompiledUpdate& u = reset.updates[i];
            double rhs = u.base.eval(c);
            if (u.random) {
                if (!env) env = m_.env_at(y_.data(), t_);
                rhs += u.sign * u.random_scale.eval(c) * sample_random(*u.random, *env, rng_);
            }
            staged[i] = rhs;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const CompiledUpdate& u = reset.updates[i];
            double value = u.set ? staged[i] : y_[static_cast<std::size_t>(u.slot)] + staged[i];
            if (u.integer_target) {
                double r = std::llround(value);
                if (std::fabs(r - value) > 1e-9)
                    throw DomainViolation("transition '" + name + "' drives integer variable off the lattice");
                value = r;
            }
            y_[static_cast<std::size_t>(u.slot)] = value;
        }
    }

    // After any jump the state must lie in the open state space: every
    // instantaneous activation strictly negative.
    void check_open_state(const std::string& name) {
        EvalCtx c = ctx_at(y_.data(), t_);
        for (const auto& td : m_.instantaneous())
            if (td.guard.activation(c) >= 0.0)
                throw PostStateOnBoundary("reset of '" + name +
                                          "' lands where instantaneous guard of '" + td.name + "' is active");
    }

    void note_jump_for_zeno() {
        recent_jumps_.push_back(t_);
        while (!recent_jumps_.empty() && recent_jumps_.front() < t_ - 1.0)
            recent_jumps_.pop_front();
        if (static_cast<double>(recent_jumps_.size()) > o_.zeno_jumps_per_unit)
            throw ZenoAbort("more than " + std::to_string(o_.zeno_jumps_per_unit) + " jumps in one time unit");
    }

    void note_surface_contact() {
        ++traj_.diagnostics.surface_crossings;
        recent_contacts_.push_back(t_);
        if (static_cast<int>(recent_contacts_.size()) > o_.chatter_contacts) {
            if (t_ - recent_contacts_.front() < o_.chatter_window)
                throw ChatteringDetected("surface contact chattering");
            recent_contacts_.pop_front();
        }
    }

    // --- observation grid

    void record_due_samples() {
        while (next_sample_ < o_.sample_times.size() && o_.sample_times[next_sample_] <= t_ + 1e-15) {
            traj_.samples.emplace_back(o_.sample_times[next_sample_],
                                       std::vector<double>(y_.begin(), y_.begin() + m_.n_state()));
            ++next_sample_;
        }
    }

    double next_stop() const {
        double stop = horizon_;
        if (next_sample_ < o_.sample_times.size())
            stop = std::min(stop, o_.sample_times[next_sample_]);
        return stop;
    }

    // --- integration with event scanning

    EventOut integrate_to_event() {
        auto rhs = [this](double t, const double* y, double* dydt) {
            m_.vector_field(y, t, dydt, {});
            dydt[m_.lambda_slot()] = m_.jump_rate(y, t, &traj_.diagnostics.negative_rate_clamps);
        };
        Dopri5<decltype(rhs)> stepper(m_.n_state() + 1, rhs, ode_options());
        DenseStep dense;

        std::vector<char> suppress_td(m_.instantaneous().size(), 0);
        std::vector<char> suppress_surface(m_.surfaces().size(), 0);
        arm_suppressions(suppress_td, suppress_surface);

        while (true) {
            double stop = next_stop();
            if (t_ >= stop - 1e-15) {
                record_due_samples();
                if (t_ >= horizon_ - 1e-15) return EventOut{};
                stop = next_stop();
            }
            double t_before = t_;
            stepper.step(t_, y_, stop, dense);

            EventOut ev = scan_step(dense, suppress_td, suppress_surface);
            if (ev.type == pdmp_detail::Candidate::Type::None) {
                record_due_samples();
                accumulate_dwell(dense);
                continue;
            }

            // roll the state back to the event point
            t_ = ev.t;
            dense.eval(t_, y_.data());
            stepper.invalidate_stages();
            stepper.reset_step_size();
            accumulate_dwell_partial(dense, t_before, ev.t);
            record_due_samples();

            if (ev.type != pdmp_detail::Candidate::Type::Surface) return ev;

            note_surface_contact();
            auto handled = handle_surface_contact(ev.index, suppress_td, suppress_surface);
            if (handled.type != pdmp_detail::Candidate::Type::None) return handled;
            arm_suppressions(suppress_td, suppress_surface);
        }
    }

    OdeOptions ode_options() const {
        OdeOptions oo = o_.ode;
        if (oo.max_step <= 0) oo.max_step = std::max(horizon_ / 50.0, 1e-6);
        return oo;
    }

    // suppress monitors that are (numerically) on their surface right now
    void arm_suppressions(std::vector<char>& suppress_td, std::vector<char>& suppress_surface) {
        EvalCtx c = ctx_at(y_.data(), t_);
        for (std::size_t i = 0; i < m_.instantaneous().size(); ++i) {
            double h = m_.instantaneous()[i].guard.activation(c);
            suppress_td[i] = std::isfinite(h) && std::fabs(h) <= release_eps() ? 1 : 0;
        }
        for (std::size_t i = 0; i < m_.surfaces().size(); ++i) {
            double h = m_.surfaces()[i].h.eval(c);
            suppress_surface[i] = std::fabs(h) <= release_eps() ? 1 : 0;
        }
    }

    double release_eps() const { return 64.0 * o_.touch_tol; }

    EventOut scan_step(const DenseStep& dense, std::vector<char>& suppress_td,
                       std::vector<char>& suppress_surface) {
        const int M = std::max(4, o_.scan_points);
        // sample states across the step
        sample_ts_.resize(static_cast<std::size_t>(M + 1));
        sample_states_.assign(static_cast<std::size_t>(M + 1) * static_cast<std::size_t>(m_.n_state() + 1), 0.0);
        for (int i = 0; i <= M; ++i) {
            double t = dense.t0 + dense.h * i / M;
            sample_ts_[static_cast<std::size_t>(i)] = t;
            dense.eval(t, sample_states_.data() + static_cast<std::size_t>(i) * (m_.n_state() + 1));
        }
        auto state_at = [&](int i) {
            return sample_states_.data() + static_cast<std::size_t>(i) * (m_.n_state() + 1);
        };

        EventOut best;
        // near-simultaneous events: a boundary firing outranks a stochastic
        // jump, which outranks a mere surface contact
        auto rank = [](pdmp_detail::Candidate::Type ty) {
            switch (ty) {
            case pdmp_detail::Candidate::Type::Boundary: return 0;
            case pdmp_detail::Candidate::Type::Stochastic: return 1;
            default: return 2;
            }
        };
        auto better = [&](const EventOut& a, const EventOut& b) {
            if (b.type == pdmp_detail::Candidate::Type::None) return true;
            if (a.t < b.t - o_.event_tol) return true;
            if (a.t > b.t + o_.event_tol) return false;
            return rank(a.type) < rank(b.type);
        };

        // stochastic threshold: Lambda - xi, monotone nondecreasing
        if (!m_.stochastic().empty()) {
            auto g = [&](const double* y) { return y[m_.lambda_slot()] - xi_; };
            for (int i = 0; i < M; ++i) {
                double g0 = g(state_at(i));
                double g1 = g(state_at(i + 1));
                if (g0 < 0 && g1 >= 0) {
                    double r = bisect(dense, sample_ts_[static_cast<std::size_t>(i)],
                                      sample_ts_[static_cast<std::size_t>(i + 1)],
                                      [&](double, const double* y) { return g(y) >= 0; });
                    EventOut cand;
                    cand.type = pdmp_detail::Candidate::Type::Stochastic;
                    cand.t = r;
                    if (better(cand, best)) best = cand;
                    break;
                }
            }
        }

        // instantaneous activations: sign changes and tangential touches
        for (std::size_t k = 0; k < m_.instantaneous().size(); ++k) {
            scan_signal(
                dense, suppress_td[k],
                [&](int i) {
                    return m_.instantaneous()[k].guard.activation(
                        ctx_at(state_at(i), sample_ts_[static_cast<std::size_t>(i)]));
                },
                [&](double t, const double* y) {
                    return m_.instantaneous()[k].guard.activation(ctx_at(y, t));
                },
                /*touch=*/true,
                [&](double t, bool is_touch, double margin, double scale) {
                    EventOut cand;
                    cand.type = pdmp_detail::Candidate::Type::Boundary;
                    cand.t = t;
                    cand.index = static_cast<int>(k);
                    cand.touch = is_touch;
                    cand.margin_value = margin;
                    cand.margin_scale = scale;
                    if (better(cand, best)) best = cand;
                },
                M);
        }

        // discontinuity surfaces of guarded flows / guarded stochastic rates
        for (std::size_t k = 0; k < m_.surfaces().size(); ++k) {
            scan_signal(
                dense, suppress_surface[k],
                [&](int i) {
                    return m_.surfaces()[k].h.eval(ctx_at(state_at(i), sample_ts_[static_cast<std::size_t>(i)]));
                },
                [&](double t, const double* y) { return m_.surfaces()[k].h.eval(ctx_at(y, t)); },
                /*touch=*/false,
                [&](double t, bool, double, double) {
                    EventOut cand;
                    cand.type = pdmp_detail::Candidate::Type::Surface;
                    cand.t = t;
                    cand.index = static_cast<int>(k);
                    if (better(cand, best)) best = cand;
                },
                M);
        }
        return best;
    }

    // Scans one monitor signal over the step samples. Reports the earliest
    // sign change (bisected) and, when `touch` is set, interior maxima that
    // reach -touch_tol without crossing.
    template <class Sampled, class AtState, class Report>
    void scan_signal(const DenseStep& dense, char& suppressed, Sampled&& g_at_sample, AtState&& g_at_state,
                     bool touch, Report&& report, int M) {
        double g_prev = g_at_sample(0);
        int start = 0;
        if (suppressed) {
            // wait until the signal leaves its surface before re-arming
            int i = 0;
            while (i <= M && std::fabs(g_at_sample(i)) <= release_eps())
                ++i;
            if (i > M) return; // still hugging the surface
            suppressed = 0;
            start = i;
            g_prev = g_at_sample(i);
        }
        for (int i = start + 1; i <= M; ++i) {
            double g = g_at_sample(i);
            if ((g_prev < 0 && g >= 0) || (g_prev > 0 && g <= 0)) {
                bool rising = g_prev < 0;
                double lo = sample_ts_[static_cast<std::size_t>(i - 1)];
                double hi = sample_ts_[static_cast<std::size_t>(i)];
                double r = bisect(dense, lo, hi, [&](double t, const double* y) {
                    double v = g_at_state(t, y);
                    return rising ? v >= 0 : v <= 0;
                });
                double margin = signal_slope(dense, g_at_state, r);
                double scale = slope_scale(dense, g_at_state);
                report(r, false, margin, scale);
                return;
            }
            // interior maximum approaching zero from below: tangential touch
            if (touch && i >= start + 2) {
                double g_before = g_at_sample(i - 2);
                double g_mid = g_prev; // value at sample i-1
                if (g_before <= g_mid && g_mid >= g && g_mid > -o_.touch_tol && g_mid < 0 &&
                    std::isfinite(g_mid)) {
                    double lo = sample_ts_[static_cast<std::size_t>(i - 2)];
                    double hi = sample_ts_[static_cast<std::size_t>(i)];
                    auto [tmax, vmax] = golden_max(dense, lo, hi, g_at_state);
                    if (vmax >= -o_.touch_tol) {
                        double scale = slope_scale(dense, g_at_state);
                        report(tmax, true, 0.0, scale);
                        return;
                    }
                }
            }
            g_prev = g;
        }
    }

    template <class Pred>
    double bisect(const DenseStep& dense, double lo, double hi, Pred&& crossed) {
        std::vector<double> buf(static_cast<std::size_t>(m_.n_state() + 1));
        for (int it = 0; it < 200 && hi - lo > o_.event_tol; ++it) {
            double mid = 0.5 * (lo + hi);
            dense.eval(mid, buf.data());
            if (crossed(mid, buf.data()))
                hi = mid;
            else
                lo = mid;
        }
        return hi;
    }

    template <class G>
    std::pair<double, double> golden_max(const DenseStep& dense, double lo, double hi, G&& g) {
        std::vector<double> buf(static_cast<std::size_t>(m_.n_state() + 1));
        auto value = [&](double t) {
            dense.eval(t, buf.data());
            return g(t, buf.data());
        };
        const double phi = 0.6180339887498949;
        double a = lo, b = hi;
        double c = b - phi * (b - a), d = a + phi * (b - a);
        double fc = value(c), fd = value(d);
        for (int it = 0; it < 80 && b - a > o_.event_tol * 1e-2; ++it) {
            if (fc >= fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = value(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = value(d);
            }
        }
        double tm = 0.5 * (a + b);
        return {tm, value(tm)};
    }

    template <class G>
    double signal_slope(const DenseStep& dense, G&& g, double t) {
        std::vector<double> buf(static_cast<std::size_t>(m_.n_state() + 1));
        double d = std::max(1e-7 * std::fabs(dense.h), 1e-12);
        double lo = std::max(dense.t0, t - d);
        double hi = std::min(dense.t_end(), t + d);
        dense.eval(lo, buf.data());
        double glo = g(lo, buf.data());
        dense.eval(hi, buf.data());
        double ghi = g(hi, buf.data());
        return (ghi - glo) / (hi - lo);
    }

    template <class G>
    double slope_scale(const DenseStep& dense, G&& g) {
        std::vector<double> buf(static_cast<std::size_t>(m_.n_state() + 1));
        double scale = 0;
        double prev = 0;
        for (int i = 0; i <= 8; ++i) {
            double t = dense.t0 + dense.h * i / 8.0;
            dense.eval(t, buf.data());
            double v = g(t, buf.data());
            if (i > 0 && std::isfinite(v) && std::isfinite(prev))
                scale = std::max(scale, std::fabs(v - prev) / (dense.h / 8.0));
            prev = v;
        }
        return scale > 0 ? scale : 1.0;
    }

    // --- dwell diagnostics for stochastic guard surfaces

    void accumulate_dwell(const DenseStep& dense) { accumulate_dwell_partial(dense, dense.t0, dense.t_end()); }

    void accumulate_dwell_partial(const DenseStep& dense, double lo, double hi) {
        if (hi <= lo) return;
        std::vector<double> buf(static_cast<std::size_t>(m_.n_state() + 1));
        for (const auto& s : m_.surfaces()) {
            if (!s.from_stochastic) continue;
            int inside = 0;
            const int K = 8;
            for (int i = 0; i <= K; ++i) {
                double t = lo + (hi - lo) * i / K;
                dense.eval(t, buf.data());
                if (std::fabs(s.h.eval(ctx_at(buf.data(), t))) < o_.tol_act) ++inside;
            }
            dwell_accum_[s.key] += (hi - lo) * inside / (K + 1);
        }
    }

    // --- Filippov machinery

    EventOut handle_surface_contact(int surface, std::vector<char>& suppress_td,
                                    std::vector<char>& suppress_surface) {
        const PdmpSurface& s = m_.surfaces()[static_cast<std::size_t>(surface)];
        std::vector<double> F1(static_cast<std::size_t>(m_.n_state()), 0.0);
        std::vector<double> F2(static_cast<std::size_t>(m_.n_state()), 0.0);
        std::vector<double> n;
        field_sides(surface, y_.data(), t_, F1, F2, n);

        double diff = 0;
        for (std::size_t i = 0; i < F1.size(); ++i)
            diff = std::max(diff, std::fabs(F1[i] - F2[i]));
        if (diff <= 1e-14) return EventOut{}; // no field discontinuity: branch switch only

        double nF1 = dot(n, F1), nF2 = dot(n, F2);
        double tol = classify_tol(F1, F2);
        ContactClass cls = classify_surface_contact(nF1, nF2, tol);
        switch (cls) {
        case ContactClass::Transversal:
            return EventOut{}; // continue integration on the target side
        case ContactClass::Tangential:
            return EventOut{}; // grazing; trajectory stays on its side
        case ContactClass::UnstableSliding:
            throw UnstableSliding("unstable sliding at surface " + s.key);
        case ContactClass::StableSliding:
            return slide(surface, suppress_td, suppress_surface);
        }
        return EventOut{};
    }

    double classify_tol(const std::vector<double>& F1, const std::vector<double>& F2) const {
        double scale = 0;
        for (double v : F1) scale = std::max(scale, std::fabs(v));
        for (double v : F2) scale = std::max(scale, std::fabs(v));
        return std::max(1e-12, 1e-9 * scale);
    }

    static double dot(const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i)
            acc += a[i] * b[i];
        return acc;
    }

    // fields on both sides of a surface plus the unit normal into h > 0
    void field_sides(int surface, const double* y, double t, std::vector<double>& F1, std::vector<double>& F2,
                     std::vector<double>& n) const {
        std::vector<SurfaceForce> plus{{surface, +1}}, minus{{surface, -1}};
        m_.vector_field(y, t, F1.data(), plus);
        m_.vector_field(y, t, F2.data(), minus);
        n.assign(F1.size(), 0.0);
        const PdmpSurface& s = m_.surfaces()[static_cast<std::size_t>(surface)];
        std::vector<double> yp(y, y + m_.n_state() + 1);
        double norm = 0;
        for (int slot : m_.tdsha().continuous_slots) {
            double step = std::max(1e-7, 1e-7 * std::fabs(y[slot]));
            double keep = yp[static_cast<std::size_t>(slot)];
            yp[static_cast<std::size_t>(slot)] = keep + step;
            double hp = s.h.eval(ctx_at(yp.data(), t));
            yp[static_cast<std::size_t>(slot)] = keep - step;
            double hm = s.h.eval(ctx_at(yp.data(), t));
            yp[static_cast<std::size_t>(slot)] = keep;
            double g = (hp - hm) / (2 * step);
            n[static_cast<std::size_t>(slot)] = g;
            norm += g * g;
        }
        norm = std::sqrt(norm);
        if (norm <= 0)
            throw DegenerateSliding("vanishing surface gradient");
        for (auto& v : n)
            v /= norm;
    }

    // constrained motion on the surface until a first-order exit, a jump or
    // the horizon
    EventOut slide(int surface, std::vector<char>& suppress_td, std::vector<char>& suppress_surface) {
        const PdmpSurface& s = m_.surfaces()[static_cast<std::size_t>(surface)];
        SlideRecord rec;
        rec.surface = surface;
        rec.key = s.key;
        rec.t_enter = t_;

        std::vector<double> F1(static_cast<std::size_t>(m_.n_state()), 0.0);
        std::vector<double> F2(static_cast<std::size_t>(m_.n_state()), 0.0);
        std::vector<double> n;
        std::vector<double> ytmp;
        long long substeps = 0;

        std::vector<double> td_h_prev(m_.instantaneous().size());
        for (std::size_t k = 0; k < m_.instantaneous().size(); ++k)
            td_h_prev[k] = activation(m_.instantaneous()[k], y_.data(), t_);

        auto finish = [&](const char* reason) {
            rec.t_exit = t_;
            rec.exit_reason = reason;
            traj_.slides.push_back(rec);
        };

        while (true) {
            if (t_ >= horizon_ - 1e-15) {
                finish("horizon");
                return EventOut{};
            }
            field_sides(surface, y_.data(), t_, F1, F2, n);
            double nF1 = dot(n, F1), nF2 = dot(n, F2);
            double tol = classify_tol(F1, F2);
            if (std::fabs(nF1) <= tol && std::fabs(nF2) <= tol)
                throw SimultaneousTangency("both fields tangential on surface " + s.key);
            if (nF1 >= -tol) {
                // field on the h>0 side became tangential: continue there
                finish("field1_tangential");
                arm_suppressions(suppress_td, suppress_surface);
                return EventOut{};
            }
            if (nF2 <= tol) {
                finish("field2_tangential");
                arm_suppressions(suppress_td, suppress_surface);
                return EventOut{};
            }

            SlidingField sf = sliding_field(F1, F2, n, tol);
            rec.alpha_min = std::min(rec.alpha_min, sf.alpha);
            rec.alpha_max = std::max(rec.alpha_max, sf.alpha);

            double dt = o_.slide_dt;
            double stop = std::min(next_stop(), horizon_);
            if (t_ + dt > stop) dt = stop - t_;
            if (dt <= 0) {
                record_due_samples();
                continue;
            }

            // Heun step along the sliding field with Lambda accumulation
            double lambda0 = m_.jump_rate(y_.data(), t_, &traj_.diagnostics.negative_rate_clamps);
            ytmp.assign(y_.begin(), y_.end());
            for (int slot : m_.tdsha().continuous_slots)
                ytmp[static_cast<std::size_t>(slot)] += dt * sf.G[static_cast<std::size_t>(slot)];
            if (m_.time_slot() >= 0) ytmp[static_cast<std::size_t>(m_.time_slot())] += dt;
            project_onto_surface(surface, ytmp, t_ + dt);
            std::vector<double> F1b(F1.size()), F2b(F2.size());
            std::vector<double> nb;
            field_sides(surface, ytmp.data(), t_ + dt, F1b, F2b, nb);
            double nF1b = dot(nb, F1b), nF2b = dot(nb, F2b);
            bool end_sliding = nF1b >= -tol || nF2b <= tol;
            SlidingField sfb = end_sliding ? sf : sliding_field(F1b, F2b, nb, tol);
            for (int slot : m_.tdsha().continuous_slots) {
                std::size_t i = static_cast<std::size_t>(slot);
                y_[i] += 0.5 * dt * (sf.G[i] + sfb.G[i]);
            }
            if (m_.time_slot() >= 0) y_[static_cast<std::size_t>(m_.time_slot())] += dt;
            double t_new = t_ + dt;
            project_onto_surface(surface, y_, t_new);
            double lambda1 = m_.jump_rate(y_.data(), t_new, &traj_.diagnostics.negative_rate_clamps);
            double lam_inc = 0.5 * dt * (lambda0 + lambda1);
            double lam_before = y_[static_cast<std::size_t>(m_.lambda_slot())];

            // stochastic jump inside the slide step
            if (lam_before + lam_inc >= xi_ && lam_inc > 0) {
                double frac = (xi_ - lam_before) / lam_inc;
                frac = std::min(std::max(frac, 0.0), 1.0);
                // retreat linearly to the jump instant
                for (int slot : m_.tdsha().continuous_slots) {
                    std::size_t i = static_cast<std::size_t>(slot);
                    y_[i] -= (1.0 - frac) * 0.5 * dt * (sf.G[i] + sfb.G[i]);
                }
                if (m_.time_slot() >= 0) y_[static_cast<std::size_t>(m_.time_slot())] -= (1.0 - frac) * dt;
                t_ += frac * dt;
                project_onto_surface(surface, y_, t_);
                y_[static_cast<std::size_t>(m_.lambda_slot())] = xi_;
                finish("jump");
                EventOut ev;
                ev.type = pdmp_detail::Candidate::Type::Stochastic;
                ev.t = t_;
                return ev;
            }

            y_[static_cast<std::size_t>(m_.lambda_slot())] = lam_before + lam_inc;
            double t_prev = t_;
            t_ = t_new;
            record_due_samples();

            double habs = std::fabs(s.h.eval(ctx_at(y_.data(), t_)));
            rec.max_abs_h = std::max(rec.max_abs_h, habs);
            if (habs > o_.slide_tol)
                throw StepFailure("sliding projection exceeded tolerance");

            // instantaneous activation during the slide
            for (std::size_t k = 0; k < m_.instantaneous().size(); ++k) {
                double h = activation(m_.instantaneous()[k], y_.data(), t_);
                if (h >= 0.0) {
                    // locate the activation instant by linear back-interpolation
                    double h_prev = td_h_prev[k];
                    double frac = (std::isfinite(h_prev) && h_prev < 0 && h > h_prev)
                                      ? -h_prev / (h - h_prev)
                                      : 1.0;
                    // walk the state back along the slide direction
                    double back = (1.0 - frac) * (t_ - t_prev);
                    for (int slot : m_.tdsha().continuous_slots) {
                        std::size_t i = static_cast<std::size_t>(slot);
                        y_[i] -= back * 0.5 * (sf.G[i] + sfb.G[i]);
                    }
                    if (m_.time_slot() >= 0) y_[static_cast<std::size_t>(m_.time_slot())] -= back;
                    t_ = t_prev + frac * (t_ - t_prev);
                    project_onto_surface(surface, y_, t_);
                    finish("jump");
                    EventOut ev;
                    ev.type = pdmp_detail::Candidate::Type::Boundary;
                    ev.t = t_;
                    ev.index = static_cast<int>(k);
                    ev.margin_value = std::isfinite(h_prev) ? (h - h_prev) / dt : 0.0;
                    ev.margin_scale = std::isfinite(h_prev) ? std::fabs(h - h_prev) / dt : 1.0;
                    return ev;
                }
                td_h_prev[k] = h;
            }

            if (++substeps > 200000000)
                throw ChatteringDetected("sliding made no progress");
        }
    }

    void project_onto_surface(int surface, std::vector<double>& y, double t) const {
        const PdmpSurface& s = m_.surfaces()[static_cast<std::size_t>(surface)];
        for (int pass = 0; pass < 3; ++pass) {
            double h = s.h.eval(ctx_at(y.data(), t));
            if (std::fabs(h) < 1e-14) return;
            // Newton step along the gradient
            double norm2 = 0;
            std::vector<double> grad(static_cast<std::size_t>(m_.n_state()), 0.0);
            std::vector<double> yp = y;
            for (int slot : m_.tdsha().continuous_slots) {
                double step = std::max(1e-7, 1e-7 * std::fabs(y[static_cast<std::size_t>(slot)]));
                double keep = yp[static_cast<std::size_t>(slot)];
                yp[static_cast<std::size_t>(slot)] = keep + step;
                double hp = s.h.eval(ctx_at(yp.data(), t));
                yp[static_cast<std::size_t>(slot)] = keep - step;
                double hm = s.h.eval(ctx_at(yp.data(), t));
                yp[static_cast<std::size_t>(slot)] = keep;
                double g = (hp - hm) / (2 * step);
                grad[static_cast<std::size_t>(slot)] = g;
                norm2 += g * g;
            }
            if (norm2 <= 0) return;
            for (int slot : m_.tdsha().continuous_slots)
                y[static_cast<std::size_t>(slot)] -= h * grad[static_cast<std::size_t>(slot)] / norm2;
        }
    }

    const PdmpModel& m_;
    SplitRng& rng_;
    PdmpOptions o_;
    double horizon_ = 0;
    double t_ = 0;
    double xi_ = 1;
    std::vector<double> y_;
    PdmpTrajectory traj_;
    std::size_t next_sample_ = 0;
    std::vector<double> sample_ts_;
    std::vector<double> sample_states_;
    std::map<std::string, double> dwell_accum_;
    std::deque<double> recent_jumps_;
    std::deque<double> recent_contacts_;
};

inline PdmpTrajectory simulate_pdmp(const PdmpModel& model, double horizon, SplitRng& rng,
                                    const PdmpOptions& opts = {}) {
    PdmpRunner runner(model, rng, opts);
    return runner.run(horizon);
}

} // namespace hypops
