#pragma once

// Slot-resolved evaluation. Models are validated and name-resolved once at
// load; the engines then evaluate flat postfix programs with index-based
// lookups (expression evaluation is the inner loop of both simulators).

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "hypops/errors.hpp"
#include "hypops/program.hpp"

namespace hypops {

struct EvalCtx {
    const double* values = nullptr; // full variable vector, program slot order
    double time = 0.0;
    const double* size = nullptr;   // null in limit mode
};

class CompiledGuard;

class CompiledExpr {
  public:
    CompiledExpr() { code_.push_back({Op::PushConst, 0, 0.0, nullptr}); }

    double eval(const EvalCtx& ctx) const {
        double stack[kMaxStack];
        int sp = 0;
        for (const Ins& ins : code_) {
            switch (ins.op) {
            case Op::PushConst: stack[sp++] = ins.k; break;
            case Op::PushVar: stack[sp++] = ctx.values[ins.a]; break;
            case Op::PushTime: stack[sp++] = ctx.time; break;
            case Op::PushSize:
                if (!ctx.size) throw SizeSymbolInLimitMode("size symbol referenced with no size bound");
                stack[sp++] = *ctx.size;
                break;
            case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
            case Op::Add: --sp; stack[sp - 1] += stack[sp]; break;
            case Op::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
            case Op::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
            case Op::Div:
                --sp;
                if (stack[sp] == 0.0) throw DivisionByZero("division by zero");
                stack[sp - 1] /= stack[sp];
                break;
            case Op::MinN: {
                double m = stack[sp - ins.a];
                for (int i = 1; i < ins.a; ++i) m = std::min(m, stack[sp - ins.a + i]);
                sp -= ins.a - 1;
                stack[sp - 1] = m;
                break;
            }
            case Op::MaxN: {
                double m = stack[sp - ins.a];
                for (int i = 1; i < ins.a; ++i) m = std::max(m, stack[sp - ins.a + i]);
                sp -= ins.a - 1;
                stack[sp - 1] = m;
                break;
            }
            case Op::Floor: stack[sp - 1] = std::floor(stack[sp - 1]); break;
            case Op::Abs: stack[sp - 1] = std::fabs(stack[sp - 1]); break;
            case Op::Indicator: stack[sp++] = guard_eval(ins.a, ctx) ? 1.0 : 0.0; break;
            }
        }
        return stack[0];
    }

    bool constant_value(double* out) const {
        if (code_.size() == 1 && code_[0].op == Op::PushConst) {
            *out = code_[0].k;
            return true;
        }
        return false;
    }

  private:
    enum class Op : std::uint8_t {
        PushConst, PushVar, PushTime, PushSize, Neg, Add, Sub, Mul, Div, MinN, MaxN, Floor, Abs, Indicator
    };
    struct Ins {
        Op op;
        int a;
        double k;
        const void* unused;
    };
    static constexpr int kMaxStack = 64;

    std::vector<Ins> code_;
    std::vector<std::shared_ptr<const CompiledGuard>> guards_;

    bool guard_eval(int idx, const EvalCtx& ctx) const;

    friend class ExprCompiler;
};

class CompiledGuard {
  public:
    enum class Kind { True, Atom, And, Or };
    Kind kind = Kind::True;
    CompiledExpr atom_lhs;
    bool strict = false;
    bool flow_constant = false; // atom references no continuously-moving quantity
    std::vector<CompiledGuard> children;

    bool eval(const EvalCtx& ctx) const {
        switch (kind) {
        case Kind::True: return true;
        case Kind::Atom: {
            double v = atom_lhs.eval(ctx);
            return strict ? v > 0.0 : v >= 0.0;
        }
        case Kind::And:
            for (const auto& c : children)
                if (!c.eval(ctx)) return false;
            return true;
        case Kind::Or:
            for (const auto& c : children)
                if (c.eval(ctx)) return true;
            return false;
        }
        return false;
    }

    // Activation value within the current mode: atoms whose value cannot
    // change during continuous evolution act as gates (+inf when true, -inf
    // when false); conjunction folds with min, disjunction with max. The
    // result is >= 0 iff the guard holds, and finite only when some moving
    // atom is binding.
    double activation(const EvalCtx& ctx) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (kind) {
        case Kind::True: return inf;
        case Kind::Atom: {
            double v = atom_lhs.eval(ctx);
            if (flow_constant) return (strict ? v > 0.0 : v >= 0.0) ? inf : -inf;
            return v;
        }
        case Kind::And: {
            double m = inf;
            for (const auto& c : children)
                m = std::min(m, c.activation(ctx));
            return m;
        }
        case Kind::Or: {
            double m = -inf;
            for (const auto& c : children)
                m = std::max(m, c.activation(ctx));
            return m;
        }
        }
        return -inf;
    }
};

inline bool CompiledExpr::guard_eval(int idx, const EvalCtx& ctx) const {
    return guards_[static_cast<std::size_t>(idx)]->eval(ctx);
}

// Name resolution tables for compilation.
struct CompileTables {
    const Program* program = nullptr;
    // var name -> slot, param name -> value
    int slot_of(const std::string& name) const { return program->var_index(name); }
    bool param_value(const std::string& name, double* out) const {
        auto it = program->params.find(name);
        if (it == program->params.end()) return false;
        *out = it->second;
        return true;
    }
    // predicate: variable moves continuously (continuous-class variable, or
    // internal clock); used for activation gating
    std::vector<bool> moves_continuously;
};

class ExprCompiler {
  public:
    explicit ExprCompiler(const CompileTables& tables) : t_(tables) {}

    CompiledExpr compile(const Expr& e) const {
        CompiledExpr out;
        out.code_.clear();
        emit(e, out);
        return out;
    }

    CompiledGuard compile(const Guard& g) const {
        CompiledGuard out;
        switch (g.kind) {
        case Guard::Kind::True: out.kind = CompiledGuard::Kind::True; break;
        case Guard::Kind::Atom:
            out.kind = CompiledGuard::Kind::Atom;
            out.atom_lhs = compile(g.atom.lhs);
            out.strict = g.atom.strict;
            out.flow_constant = !expr_moves(g.atom.lhs);
            break;
        case Guard::Kind::And:
        case Guard::Kind::Or:
            out.kind = g.kind == Guard::Kind::And ? CompiledGuard::Kind::And : CompiledGuard::Kind::Or;
            for (const auto& c : g.children)
                out.children.push_back(compile(c));
            break;
        }
        return out;
    }

    // Whether evaluation can change during continuous evolution.
    bool expr_moves(const Expr& e) const {
        bool moves = false;
        visit_exprs(e, [&](const Expr& n) {
            if (n.op == ExprOp::Time) moves = true;
            if (n.op == ExprOp::Var) {
                int slot = t_.slot_of(n.name);
                if (slot >= 0 && slot < static_cast<int>(t_.moves_continuously.size()) &&
                    t_.moves_continuously[slot])
                    moves = true;
            }
        });
        return moves;
    }

  private:
    using Op = CompiledExpr::Op;

    void emit(const Expr& e, CompiledExpr& out) const {
        switch (e.op) {
        case ExprOp::Const:
            out.code_.push_back({Op::PushConst, 0, e.value, nullptr});
            return;
        case ExprOp::Var: {
            double pv;
            int slot = t_.slot_of(e.name);
            if (slot >= 0) {
                out.code_.push_back({Op::PushVar, slot, 0.0, nullptr});
            } else if (t_.param_value(e.name, &pv)) {
                out.code_.push_back({Op::PushConst, 0, pv, nullptr});
            } else {
                throw UnboundVariable("unbound name '" + e.name + "'");
            }
            return;
        }
        case ExprOp::Param: {
            double pv;
            if (!t_.param_value(e.name, &pv))
                throw UnboundVariable("unbound parameter '" + e.name + "'");
            out.code_.push_back({Op::PushConst, 0, pv, nullptr});
            return;
        }
        case ExprOp::SizeN:
            out.code_.push_back({Op::PushSize, 0, 0.0, nullptr});
            return;
        case ExprOp::Time:
            out.code_.push_back({Op::PushTime, 0, 0.0, nullptr});
            return;
        case ExprOp::Neg:
            emit(e.args[0], out);
            out.code_.push_back({Op::Neg, 0, 0.0, nullptr});
            return;
        case ExprOp::Add:
        case ExprOp::Sub:
        case ExprOp::Mul:
        case ExprOp::Div:
            emit(e.args[0], out);
            emit(e.args[1], out);
            out.code_.push_back({e.op == ExprOp::Add   ? Op::Add
                                 : e.op == ExprOp::Sub ? Op::Sub
                                 : e.op == ExprOp::Mul ? Op::Mul
                                                       : Op::Div,
                                 0, 0.0, nullptr});
            return;
        case ExprOp::Min:
        case ExprOp::Max:
            for (const auto& a : e.args)
                emit(a, out);
            out.code_.push_back({e.op == ExprOp::Min ? Op::MinN : Op::MaxN,
                                 static_cast<int>(e.args.size()), 0.0, nullptr});
            return;
        case ExprOp::Floor:
            emit(e.args[0], out);
            out.code_.push_back({Op::Floor, 0, 0.0, nullptr});
            return;
        case ExprOp::Abs:
            emit(e.args[0], out);
            out.code_.push_back({Op::Abs, 0, 0.0, nullptr});
            return;
        case ExprOp::Indicator: {
            auto g = std::make_shared<CompiledGuard>(compile(*e.guard));
            out.guards_.push_back(g);
            out.code_.push_back({Op::Indicator, static_cast<int>(out.guards_.size() - 1), 0.0, nullptr});
            return;
        }
        }
        throw Error("corrupt expression node");
    }

    const CompileTables& t_;
};

} // namespace hypops
