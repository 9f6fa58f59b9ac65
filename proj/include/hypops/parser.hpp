#pragma once

// Text format for population models. Grammar sketch:
//
//   model   := decl*
//   decl    := "param" NAME "=" expr ";"
//            | "size" NAME ";"
//            | "var" NAME ":" kind "init" expr ";"
//            | "agent" NAME "{" action* "}"
//   kind    := "discrete" | "continuous" | "environment"
//   action  := NAME ":" ["[" guard "]"] ("rate" expr | "immediate" "weight" expr)
//              ["class" ("continuous" | "discrete")] "->" "{" update* "}" ";"
//   update  := NAME ("+=" | "-=" | "=") rhs ";"
//   rhs     := sample | expr ["+" sample]
//   sample  := "sample" DIST "(" args ")"
//
// Comments run from "//" to end of line. `N` (the declared size symbol) and
// `time` are reserved. Diagnostics carry file:line:col positions.

#include <cctype>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "hypops/program.hpp"

namespace hypops {

struct ParseDiagnostic {
    int line = 0;
    int col = 0;
    std::string message;
};

struct SourceModel {
    std::string file;
    std::string text;
    std::optional<Program> program;
    std::vector<ParseDiagnostic> diagnostics; // parse errors
    std::vector<Diagnostic> validation;       // semantic findings

    bool ok() const { return program.has_value() && diagnostics.empty() && !has_errors(validation); }

    std::string diagnostics_text() const {
        std::string out;
        for (const auto& d : diagnostics)
            out += file + ":" + std::to_string(d.line) + ":" + std::to_string(d.col) + ": " + d.message + "\n";
        for (const auto& d : validation)
            out += file + ": " + d.str() + "\n";
        return out;
    }
};

namespace parser_detail {

enum class Tok { Ident, Number, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    double number = 0;
    int line = 1, col = 1;
};

class Lexer {
  public:
    explicit Lexer(const std::string& src) : src_(src) {}

    Token next() {
        skip_ws();
        Token t;
        t.line = line_;
        t.col = col_;
        if (pos_ >= src_.size()) {
            t.kind = Tok::End;
            return t;
        }
        char c = src_[pos_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            t.kind = Tok::Ident;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                t.text += take();
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            t.kind = Tok::Number;
            std::size_t start = pos_;
            while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
                take();
            if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
                std::size_t save = pos_;
                int save_line = line_, save_col = col_;
                take();
                if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) take();
                if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) take();
                } else {
                    pos_ = save;
                    line_ = save_line;
                    col_ = save_col;
                }
            }
            t.text = src_.substr(start, pos_ - start);
            t.number = std::strtod(t.text.c_str(), nullptr);
            return t;
        }
        // multi-char punctuation
        static const char* two[] = {"+=", "-=", "==", ">=", "<=", "&&", "||", "->", "!="};
        for (const char* p : two) {
            if (src_.compare(pos_, 2, p) == 0) {
                t.kind = Tok::Punct;
                t.text = p;
                take();
                take();
                return t;
            }
        }
        t.kind = Tok::Punct;
        t.text = std::string(1, take());
        return t;
    }

    struct State {
        std::size_t pos;
        int line, col;
    };
    State save() const { return {pos_, line_, col_}; }
    void restore(State s) {
        pos_ = s.pos;
        line_ = s.line;
        col_ = s.col;
    }

  private:
    char take() {
        char c = src_[pos_++];
        if (c == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        return c;
    }
    void skip_ws() {
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
                while (pos_ < src_.size() && src_[pos_] != '\n') take();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                take();
            } else {
                break;
            }
        }
    }
    const std::string& src_;
    std::size_t pos_ = 0;
    int line_ = 1, col_ = 1;
};

class Parser {
  public:
    Parser(const std::string& src, SourceModel& out) : lex_(src), out_(out) { advance(); }

    void parse_model() {
        Program prog;
        bool any = false;
        while (cur_.kind != Tok::End) {
            any = true;
            if (is_ident("param"))
                parse_param(prog);
            else if (is_ident("size"))
                parse_size(prog);
            else if (is_ident("var"))
                parse_var(prog);
            else if (is_ident("agent"))
                parse_agent(prog);
            else
                fail("expected 'param', 'size', 'var' or 'agent'");
        }
        if (!any)
            fail("empty model");
        out_.program = std::move(prog);
    }

    struct Bail {};

  private:
    [[noreturn]] void fail(const std::string& msg) {
        out_.diagnostics.push_back({cur_.line, cur_.col, msg});
        throw Bail{};
    }

    void advance() { cur_ = lex_.next(); }

    bool is_ident(const char* s) const { return cur_.kind == Tok::Ident && cur_.text == s; }
    bool is_punct(const char* s) const { return cur_.kind == Tok::Punct && cur_.text == s; }

    void expect_punct(const char* s) {
        if (!is_punct(s)) fail(std::string("expected '") + s + "'");
        advance();
    }
    std::string expect_ident(const char* what) {
        if (cur_.kind != Tok::Ident) fail(std::string("expected ") + what);
        std::string s = cur_.text;
        advance();
        return s;
    }

    static bool reserved_word(const std::string& s) {
        static const char* words[] = {"param", "size",  "var",    "agent",  "rate",   "immediate",
                                      "weight", "class", "init",   "sample", "time",   "true",
                                      "min",    "max",   "floor",  "abs",    "ind",    "discrete",
                                      "continuous", "environment"};
        for (const char* w : words)
            if (s == w) return true;
        return false;
    }

    void check_declarable(const Program& prog, const std::string& name) {
        if (reserved_word(name) || name == prog.size_name)
            fail("'" + name + "' is reserved");
        if (prog.var_index(name) >= 0 || prog.params.count(name))
            fail("duplicate declaration of '" + name + "'");
        for (const auto& c : prog.components)
            if (c.name == name) fail("duplicate declaration of '" + name + "'");
    }

    void parse_param(Program& prog) {
        advance();
        std::string name = expect_ident("parameter name");
        check_declarable(prog, name);
        expect_punct("=");
        Expr e = parse_expr(prog);
        expect_punct(";");
        if (contains_var(e) || contains_time(e) || contains_size_symbol(e))
            fail("parameter '" + name + "' must be a constant expression");
        Env env;
        for (auto& [k, v] : prog.params)
            env.values[k] = v;
        try {
            prog.params[name] = eval_expr(e, env);
        } catch (const Error& err) {
            fail(std::string("parameter '") + name + "': " + err.what());
        }
    }

    void parse_size(Program& prog) {
        advance();
        std::string name = expect_ident("size symbol name");
        if (reserved_word(name)) fail("'" + name + "' is reserved");
        prog.size_name = name;
        expect_punct(";");
    }

    void parse_var(Program& prog) {
        advance();
        std::string name = expect_ident("variable name");
        check_declarable(prog, name);
        expect_punct(":");
        std::string kind = expect_ident("variable kind");
        VariableDecl decl;
        decl.name = name;
        if (kind == "discrete") {
            decl.kind = VarKind::Discrete;
            decl.domain = VarDomain::Integer;
        } else if (kind == "continuous") {
            decl.kind = VarKind::Continuous;
            decl.domain = VarDomain::Integer;
        } else if (kind == "environment") {
            decl.kind = VarKind::Environment;
            decl.domain = VarDomain::Real;
        } else {
            fail("variable kind must be 'discrete', 'continuous' or 'environment'");
        }
        if (!is_ident("init")) fail("expected 'init'");
        advance();
        decl.init = parse_expr(prog);
        expect_punct(";");
        prog.variables.push_back(std::move(decl));
    }

    void parse_agent(Program& prog) {
        advance();
        std::string name = expect_ident("agent name");
        check_declarable(prog, name);
        Component comp;
        comp.name = name;
        expect_punct("{");
        while (!is_punct("}")) {
            if (cur_.kind == Tok::End) fail("unterminated agent body");
            comp.actions.push_back(parse_action(prog));
        }
        advance();
        prog.components.push_back(std::move(comp));
    }

    Action parse_action(Program& prog) {
        Action act;
        act.name = expect_ident("action name");
        expect_punct(":");
        if (is_punct("[")) {
            advance();
            act.guard = parse_guard(prog);
            expect_punct("]");
        }
        if (is_ident("rate")) {
            advance();
            act.kind = ActionKind::Stochastic;
            act.rate_or_weight = parse_expr(prog);
        } else if (is_ident("immediate")) {
            advance();
            if (!is_ident("weight")) fail("expected 'weight'");
            advance();
            act.kind = ActionKind::Instantaneous;
            act.cls = ActionClass::Discrete;
            act.rate_or_weight = parse_expr(prog);
        } else {
            fail("expected 'rate' or 'immediate weight'");
        }
        if (is_ident("class")) {
            advance();
            std::string cls = expect_ident("transition class");
            if (cls == "continuous")
                act.cls = ActionClass::Continuous;
            else if (cls == "discrete")
                act.cls = ActionClass::Discrete;
            else
                fail("class must be 'continuous' or 'discrete'");
        }
        expect_punct("->");
        expect_punct("{");
        while (!is_punct("}")) {
            if (cur_.kind == Tok::End) fail("unterminated update block");
            act.reset.updates.push_back(parse_update(prog));
        }
        advance();
        expect_punct(";");
        return act;
    }

    ResetUpdate parse_update(Program& prog) {
        ResetUpdate u;
        u.target = expect_ident("update target");
        double sign = 1.0;
        if (is_punct("+=")) {
            u.set = false;
        } else if (is_punct("-=")) {
            u.set = false;
            sign = -1.0;
        } else if (is_punct("=")) {
            u.set = true;
        } else {
            fail("expected '+=', '-=' or '='");
        }
        advance();

        if (is_ident("sample")) {
            u.random = parse_sample(prog);
            u.base = constant(0.0);
            u.explicit_base = false;
            u.sign = sign;
        } else {
            Expr e = parse_expr(prog);
            if (is_punct("+") && peek_is_sample()) {
                advance(); // '+'
                u.random = parse_sample(prog);
                u.base = sign < 0 ? neg(std::move(e)) : std::move(e);
                u.sign = sign;
            } else {
                u.base = sign < 0 ? neg(std::move(e)) : std::move(e);
                u.sign = 1.0;
            }
            u.explicit_base = true;
        }
        expect_punct(";");
        return u;
    }

    bool peek_is_sample() {
        auto s = lex_.save();
        Token saved = cur_;
        advance();
        bool yes = is_ident("sample");
        lex_.restore(s);
        cur_ = saved;
        return yes;
    }

    RandomSpec parse_sample(Program& prog) {
        advance(); // 'sample'
        std::string dist = expect_ident("distribution name");
        RandomSpec spec;
        if (dist == "constant")
            spec.dist = Dist::Constant;
        else if (dist == "uniform")
            spec.dist = Dist::Uniform;
        else if (dist == "normal")
            spec.dist = Dist::Normal;
        else if (dist == "lognormal")
            spec.dist = Dist::Lognormal;
        else if (dist == "geometric")
            spec.dist = Dist::Geometric;
        else if (dist == "binomial")
            spec.dist = Dist::Binomial;
        else if (dist == "weibull")
            spec.dist = Dist::Weibull;
        else if (dist == "categorical")
            spec.dist = Dist::Categorical;
        else
            fail("unknown distribution '" + dist + "'");
        expect_punct("(");
        if (spec.dist == Dist::Categorical) {
            while (true) {
                expect_punct("(");
                Expr value = parse_expr(prog);
                expect_punct(",");
                Expr weight = parse_expr(prog);
                expect_punct(")");
                spec.cats.emplace_back(std::move(value), std::move(weight));
                if (is_punct(",")) {
                    advance();
                    continue;
                }
                break;
            }
            if (spec.cats.empty()) fail("categorical needs at least one (value, weight) pair");
        } else {
            spec.params.push_back(parse_expr(prog));
            while (is_punct(",")) {
                advance();
                spec.params.push_back(parse_expr(prog));
            }
            if (spec.params.size() != dist_arity(spec.dist))
                fail(std::string(dist_name(spec.dist)) + " takes " + std::to_string(dist_arity(spec.dist)) +
                     " parameter(s)");
        }
        expect_punct(")");
        return spec;
    }

    // guards: disjunction of conjunctions of comparisons / parenthesized guards
    Guard parse_guard(Program& prog) {
        Guard g = parse_guard_conj(prog);
        if (!is_punct("||")) return g;
        std::vector<Guard> parts{std::move(g)};
        while (is_punct("||")) {
            advance();
            parts.push_back(parse_guard_conj(prog));
        }
        return guard_or(std::move(parts));
    }

    Guard parse_guard_conj(Program& prog) {
        Guard g = parse_guard_atom(prog);
        if (!is_punct("&&")) return g;
        std::vector<Guard> parts{std::move(g)};
        while (is_punct("&&")) {
            advance();
            parts.push_back(parse_guard_atom(prog));
        }
        // flatten equality sugar that expanded to nested conjunctions
        std::vector<Guard> flat;
        for (auto& p : parts) {
            if (p.kind == Guard::Kind::And)
                for (auto& c : p.children)
                    flat.push_back(std::move(c));
            else
                flat.push_back(std::move(p));
        }
        return guard_and(std::move(flat));
    }

    Guard parse_guard_atom(Program& prog) {
        if (is_ident("true")) {
            advance();
            return guard_true();
        }
        if (is_punct("(")) {
            // Either a parenthesized guard or a parenthesized expression that
            // starts a comparison. Try the guard reading first.
            auto s = lex_.save();
            Token saved = cur_;
            std::size_t saved_diags = out_.diagnostics.size();
            try {
                advance();
                Guard g = parse_guard(prog);
                expect_punct(")");
                if (is_comparison_op()) throw Bail{}; // was an expression after all
                return g;
            } catch (const Bail&) {
                out_.diagnostics.resize(saved_diags);
                lex_.restore(s);
                cur_ = saved;
            }
        }
        Expr lhs = parse_expr(prog);
        if (!is_comparison_op()) fail("expected comparison operator in guard");
        std::string op = cur_.text;
        advance();
        Expr rhs = parse_expr(prog);
        // Normalize to atoms of the form e >= 0 / e > 0; a literal 0 side is
        // absorbed so printed guards reparse to the identical tree.
        auto diff = [](Expr a, Expr b) {
            if (b.op == ExprOp::Const && b.value == 0.0) return a;
            if (a.op == ExprOp::Const && a.value == 0.0) return neg(std::move(b));
            return sub(std::move(a), std::move(b));
        };
        if (op == ">=") return guard_atom(diff(std::move(lhs), std::move(rhs)), false);
        if (op == ">") return guard_atom(diff(std::move(lhs), std::move(rhs)), true);
        if (op == "<=") return guard_atom(diff(std::move(rhs), std::move(lhs)), false);
        if (op == "<") return guard_atom(diff(std::move(rhs), std::move(lhs)), true);
        // equality: both differences non-negative
        return guard_and({guard_atom(diff(lhs, rhs), false), guard_atom(diff(rhs, lhs), false)});
    }

    bool is_comparison_op() const {
        return is_punct(">=") || is_punct(">") || is_punct("<=") || is_punct("<") || is_punct("==");
    }

    // expressions
    Expr parse_expr(Program& prog) { return parse_additive(prog); }

    Expr parse_additive(Program& prog) {
        Expr e = parse_multiplicative(prog);
        while (is_punct("+") || is_punct("-")) {
            if (is_punct("+") && peek_is_sample()) break; // rhs of an update: expr + sample
            bool plus = is_punct("+");
            advance();
            Expr r = parse_multiplicative(prog);
            e = plus ? add(std::move(e), std::move(r)) : sub(std::move(e), std::move(r));
        }
        return e;
    }

    Expr parse_multiplicative(Program& prog) {
        Expr e = parse_unary(prog);
        while (is_punct("*") || is_punct("/")) {
            bool times = is_punct("*");
            advance();
            Expr r = parse_unary(prog);
            e = times ? mul(std::move(e), std::move(r)) : divide(std::move(e), std::move(r));
        }
        return e;
    }

    Expr parse_unary(Program& prog) {
        if (is_punct("-")) {
            advance();
            Expr inner = parse_unary(prog);
            // fold a negated literal so printed constants reparse identically
            if (inner.op == ExprOp::Const) return constant(-inner.value);
            return neg(std::move(inner));
        }
        return parse_primary(prog);
    }

    Expr parse_primary(Program& prog) {
        if (cur_.kind == Tok::Number) {
            double v = cur_.number;
            advance();
            return constant(v);
        }
        if (is_punct("(")) {
            advance();
            Expr e = parse_expr(prog);
            expect_punct(")");
            return e;
        }
        if (cur_.kind == Tok::Ident) {
            std::string name = cur_.text;
            if (name == "time") {
                advance();
                return time_symbol();
            }
            if (name == prog.size_name) {
                advance();
                return size_symbol();
            }
            if (name == "min" || name == "max") {
                advance();
                expect_punct("(");
                std::vector<Expr> args{parse_expr(prog)};
                while (is_punct(",")) {
                    advance();
                    args.push_back(parse_expr(prog));
                }
                expect_punct(")");
                if (args.size() < 2) fail("min/max take at least two arguments");
                return nary(name == "min" ? ExprOp::Min : ExprOp::Max, std::move(args));
            }
            if (name == "floor" || name == "abs") {
                advance();
                expect_punct("(");
                Expr a = parse_expr(prog);
                expect_punct(")");
                return name == "floor" ? floor_of(std::move(a)) : abs_of(std::move(a));
            }
            if (name == "ind") {
                advance();
                expect_punct("(");
                Guard g = parse_guard(prog);
                expect_punct(")");
                return indicator(std::move(g));
            }
            if (reserved_word(name)) fail("'" + name + "' cannot be used here");
            advance();
            if (prog.params.count(name)) return param_ref(name);
            return var_ref(name); // resolution re-checked by validate()
        }
        fail("expected expression");
    }

    Lexer lex_;
    SourceModel& out_;
    Token cur_;
};

} // namespace parser_detail

inline SourceModel parse_source(const std::string& text, const std::string& file = "<input>") {
    SourceModel out;
    out.file = file;
    out.text = text;
    parser_detail::Parser p(text, out);
    try {
        p.parse_model();
    } catch (const parser_detail::Parser::Bail&) {
        out.program.reset();
        return out;
    }
    if (out.program)
        out.validation = validate(*out.program);
    return out;
}

// Parses and validates; throws on any error.
inline Program parse_model(const std::string& text, const std::string& file = "<input>") {
    SourceModel src = parse_source(text, file);
    if (!src.program || !src.diagnostics.empty())
        throw ParseError(src.diagnostics_text().empty() ? "parse failed" : src.diagnostics_text());
    if (has_errors(src.validation))
        throw ValidationFailed(src.diagnostics_text());
    return *src.program;
}

// ---------------------------------------------------------------------------
// Pretty printer. parse(pretty_print(p)) is structurally equal to p.

namespace parser_detail {

inline std::string print_guard_source(const Guard& g);

inline std::string print_atom_source(const GuardAtom& a) {
    // atoms are stored as (lhs >= 0) / (lhs > 0); print them back that way
    return to_string(a.lhs) + (a.strict ? " > 0" : " >= 0");
}

inline std::string print_guard_source(const Guard& g) {
    switch (g.kind) {
    case Guard::Kind::True: return "true";
    case Guard::Kind::Atom: return print_atom_source(g.atom);
    case Guard::Kind::And:
    case Guard::Kind::Or: {
        std::string sep = g.kind == Guard::Kind::And ? " && " : " || ";
        std::string out;
        for (std::size_t i = 0; i < g.children.size(); ++i) {
            if (i) out += sep;
            const Guard& c = g.children[i];
            bool wrap = c.kind == Guard::Kind::And || c.kind == Guard::Kind::Or;
            if (wrap) out += '(';
            out += print_guard_source(c);
            if (wrap) out += ')';
        }
        return out;
    }
    }
    return "true";
}

} // namespace parser_detail

inline std::string pretty_print(const Program& p) {
    std::string out;
    out += "size " + p.size_name + ";\n";
    for (const auto& [k, v] : p.params)
        out += "param " + k + " = " + detail::format_double(v) + ";\n";
    if (!p.params.empty()) out += "\n";
    for (const auto& v : p.variables) {
        out += "var " + v.name + " : ";
        out += v.kind == VarKind::Discrete ? "discrete" : v.kind == VarKind::Continuous ? "continuous" : "environment";
        out += " init " + to_string(v.init) + ";\n";
    }
    for (const auto& comp : p.components) {
        out += "\nagent " + comp.name + " {\n";
        for (const auto& act : comp.actions) {
            out += "  " + act.name + " : ";
            if (act.guard.kind != Guard::Kind::True)
                out += "[" + parser_detail::print_guard_source(act.guard) + "] ";
            if (act.kind == ActionKind::Stochastic) {
                out += "rate " + to_string(act.rate_or_weight);
                if (act.cls == ActionClass::Continuous)
                    out += " class continuous";
                else
                    out += " class discrete";
            } else {
                out += "immediate weight " + to_string(act.rate_or_weight);
            }
            out += " -> {";
            for (const auto& u : act.reset.updates) {
                out += " " + u.target + " ";
                bool negated_inc = !u.set && !u.random && u.base.op == ExprOp::Neg;
                bool negated_sample = !u.set && u.random && u.sign < 0;
                if (u.set)
                    out += "= ";
                else if (negated_inc || negated_sample)
                    out += "-= ";
                else
                    out += "+= ";
                if (u.random) {
                    bool base_is_zero = u.base.op == ExprOp::Const && u.base.value == 0.0 && !u.explicit_base;
                    if (!base_is_zero) {
                        Expr shown = negated_sample && u.base.op == ExprOp::Neg ? u.base.args[0] : u.base;
                        out += to_string(shown) + " + ";
                    }
                    out += to_string(*u.random);
                } else {
                    out += to_string(negated_inc ? u.base.args[0] : u.base);
                }
                out += ";";
            }
            out += " };\n";
        }
        out += "}\n";
    }
    return out;
}

} // namespace hypops
