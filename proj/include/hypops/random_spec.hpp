#pragma once

// Random-reset specifications. Parameters are expressions, so a reset
// distribution may depend on the current state. Draws are a pure function
// of (spec, environment, rng stream position).

#include <cmath>
#include <string>
#include <vector>

#include "hypops/errors.hpp"
#include "hypops/expr.hpp"
#include "hypops/rng.hpp"

namespace hypops {

enum class Dist {
    Constant,   // (value)
    Uniform,    // (lo, hi)
    Normal,     // (mean, sd)
    Lognormal,  // (meanlog, sdlog)
    Geometric,  // (p), support {1, 2, ...}
    Binomial,   // (n, p)
    Weibull,    // (shape, rate); scale = 1/rate
    Categorical // list of (value, weight)
};

struct RandomSpec {
    Dist dist = Dist::Constant;
    std::vector<Expr> params;                  // family parameters in declaration order
    std::vector<std::pair<Expr, Expr>> cats;   // Categorical only
};

inline const char* dist_name(Dist d) {
    switch (d) {
    case Dist::Constant: return "constant";
    case Dist::Uniform: return "uniform";
    case Dist::Normal: return "normal";
    case Dist::Lognormal: return "lognormal";
    case Dist::Geometric: return "geometric";
    case Dist::Binomial: return "binomial";
    case Dist::Weibull: return "weibull";
    case Dist::Categorical: return "categorical";
    }
    return "?";
}

inline std::size_t dist_arity(Dist d) {
    switch (d) {
    case Dist::Constant: return 1;
    case Dist::Geometric: return 1;
    case Dist::Uniform:
    case Dist::Normal:
    case Dist::Lognormal:
    case Dist::Binomial:
    case Dist::Weibull: return 2;
    case Dist::Categorical: return 0;
    }
    return 0;
}

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw InvalidParameter(std::string("invalid distribution parameter: ") + what);
}

} // namespace detail

// One draw. Evaluation of the parameters may itself throw (unbound names,
// division by zero); parameter-domain violations raise InvalidParameter.
inline double sample_random(const RandomSpec& spec, const Env& env, SplitRng& rng) {
    switch (spec.dist) {
    case Dist::Constant:
        return eval_expr(spec.params[0], env);
    case Dist::Uniform: {
        double lo = eval_expr(spec.params[0], env);
        double hi = eval_expr(spec.params[1], env);
        detail::require(lo <= hi, "uniform needs lo <= hi");
        return rng.uniform(lo, hi);
    }
    case Dist::Normal: {
        double mean = eval_expr(spec.params[0], env);
        double sd = eval_expr(spec.params[1], env);
        detail::require(sd >= 0, "normal needs sd >= 0");
        return rng.normal(mean, sd);
    }
    case Dist::Lognormal: {
        double mu = eval_expr(spec.params[0], env);
        double sigma = eval_expr(spec.params[1], env);
        detail::require(sigma >= 0, "lognormal needs sdlog >= 0");
        return std::exp(rng.normal(mu, sigma));
    }
    case Dist::Geometric: {
        double p = eval_expr(spec.params[0], env);
        detail::require(p > 0 && p <= 1, "geometric needs p in (0,1]");
        if (p == 1.0) return 1.0;
        double u = rng.uniform01();
        double k = std::ceil(std::log(u) / std::log1p(-p));
        return std::max(1.0, k);
    }
    case Dist::Binomial: {
        double nd = eval_expr(spec.params[0], env);
        double p = eval_expr(spec.params[1], env);
        detail::require(nd >= 0 && nd == std::floor(nd), "binomial needs integer n >= 0");
        detail::require(p >= 0 && p <= 1, "binomial needs p in [0,1]");
        long n = static_cast<long>(nd);
        long hits = 0;
        for (long i = 0; i < n; ++i)
            if (rng.uniform01() < p) ++hits;
        return static_cast<double>(hits);
    }
    case Dist::Weibull: {
        double shape = eval_expr(spec.params[0], env);
        double rate = eval_expr(spec.params[1], env);
        detail::require(shape > 0 && rate > 0, "weibull needs shape > 0 and rate > 0");
        return std::pow(-std::log(rng.uniform01()), 1.0 / shape) / rate;
    }
    case Dist::Categorical: {
        detail::require(!spec.cats.empty(), "categorical needs at least one entry");
        std::vector<double> w(spec.cats.size());
        double total = 0;
        for (std::size_t i = 0; i < spec.cats.size(); ++i) {
            w[i] = eval_expr(spec.cats[i].second, env);
            detail::require(w[i] >= 0, "categorical weights must be >= 0");
            total += w[i];
        }
        detail::require(total > 0, "categorical weights must not all vanish");
        double u = rng.uniform01() * total;
        double acc = 0;
        for (std::size_t i = 0; i < spec.cats.size(); ++i) {
            acc += w[i];
            if (u <= acc) return eval_expr(spec.cats[i].first, env);
        }
        return eval_expr(spec.cats.back().first, env);
    }
    }
    throw Error("corrupt random spec");
}

// Analytic mean under the environment. Every supported family has one.
inline double expected_value(const RandomSpec& spec, const Env& env) {
    switch (spec.dist) {
    case Dist::Constant:
        return eval_expr(spec.params[0], env);
    case Dist::Uniform:
        return 0.5 * (eval_expr(spec.params[0], env) + eval_expr(spec.params[1], env));
    case Dist::Normal:
        return eval_expr(spec.params[0], env);
    case Dist::Lognormal: {
        double mu = eval_expr(spec.params[0], env);
        double sigma = eval_expr(spec.params[1], env);
        return std::exp(mu + 0.5 * sigma * sigma);
    }
    case Dist::Geometric: {
        double p = eval_expr(spec.params[0], env);
        detail::require(p > 0 && p <= 1, "geometric needs p in (0,1]");
        return 1.0 / p;
    }
    case Dist::Binomial:
        return eval_expr(spec.params[0], env) * eval_expr(spec.params[1], env);
    case Dist::Weibull: {
        double shape = eval_expr(spec.params[0], env);
        double rate = eval_expr(spec.params[1], env);
        detail::require(shape > 0 && rate > 0, "weibull needs shape > 0 and rate > 0");
        return std::tgamma(1.0 + 1.0 / shape) / rate;
    }
    case Dist::Categorical: {
        double total = 0, acc = 0;
        for (const auto& [value, weight] : spec.cats) {
            double w = eval_expr(weight, env);
            detail::require(w >= 0, "categorical weights must be >= 0");
            total += w;
            acc += w * eval_expr(value, env);
        }
        detail::require(total > 0, "categorical weights must not all vanish");
        return acc / total;
    }
    }
    throw NoClosedForm("no closed-form mean for this family");
}

// Symbolic mean as an expression of the parameter expressions; used when a
// flow's increment has a state-dependent distribution.
inline Expr expected_value_expr(const RandomSpec& spec) {
    switch (spec.dist) {
    case Dist::Constant: return spec.params[0];
    case Dist::Uniform: return mul(constant(0.5), add(spec.params[0], spec.params[1]));
    case Dist::Normal: return spec.params[0];
    case Dist::Lognormal:
        // no algebraic exp() node in the grammar; state-independent means are
        // folded numerically by callers
        throw NoClosedForm("lognormal mean is not expressible in the expression grammar");
    case Dist::Geometric: return divide(constant(1.0), spec.params[0]);
    case Dist::Binomial: return mul(spec.params[0], spec.params[1]);
    case Dist::Weibull:
        throw NoClosedForm("weibull mean is not expressible in the expression grammar");
    case Dist::Categorical: {
        // sum(w_i v_i) / sum(w_i)
        Expr num = constant(0), den = constant(0);
        for (const auto& [value, weight] : spec.cats) {
            num = add(num, mul(weight, value));
            den = add(den, weight);
        }
        return divide(num, den);
    }
    }
    throw NoClosedForm("no closed-form mean for this family");
}

template <class Fn>
inline void visit_random_spec_exprs(const RandomSpec& spec, Fn&& fn) {
    for (const auto& p : spec.params)
        visit_exprs(p, fn);
    for (const auto& [v, w] : spec.cats) {
        visit_exprs(v, fn);
        visit_exprs(w, fn);
    }
}

inline bool structurally_equal(const RandomSpec& a, const RandomSpec& b) {
    if (a.dist != b.dist || a.params.size() != b.params.size() || a.cats.size() != b.cats.size())
        return false;
    for (std::size_t i = 0; i < a.params.size(); ++i)
        if (!structurally_equal(a.params[i], b.params[i])) return false;
    for (std::size_t i = 0; i < a.cats.size(); ++i)
        if (!structurally_equal(a.cats[i].first, b.cats[i].first) ||
            !structurally_equal(a.cats[i].second, b.cats[i].second))
            return false;
    return true;
}

inline std::string to_string(const RandomSpec& spec) {
    std::string out = "sample ";
    out += dist_name(spec.dist);
    out += '(';
    if (spec.dist == Dist::Categorical) {
        for (std::size_t i = 0; i < spec.cats.size(); ++i) {
            if (i) out += ", ";
            out += '(' + to_string(spec.cats[i].first) + ", " + to_string(spec.cats[i].second) + ')';
        }
    } else {
        for (std::size_t i = 0; i < spec.params.size(); ++i) {
            if (i) out += ", ";
            out += to_string(spec.params[i]);
        }
    }
    out += ')';
    return out;
}

} // namespace hypops
