#pragma once

// Adaptive embedded Runge-Kutta 5(4) (Dormand-Prince) with the classic
// 4th-order dense-output interpolant. The interpolant and its derivative are
// exposed so callers can localize events inside accepted steps.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "hypops/errors.hpp"

namespace hypops {

struct DenseStep {
    double t0 = 0, h = 0;
    int n = 0;
    std::vector<double> r; // 5 interpolation vectors, flattened [5][n]

    double t_end() const { return t0 + h; }

    void eval(double t, double* out) const {
        double th = (t - t0) / h;
        double s = 1.0 - th;
        for (int i = 0; i < n; ++i) {
            const double* ri = r.data() + i;
            double r1 = ri[0], r2 = ri[n], r3 = ri[2 * n], r4 = ri[3 * n], r5 = ri[4 * n];
            out[i] = r1 + th * (r2 + s * (r3 + th * (r4 + s * r5)));
        }
    }

    double eval_component(double t, int i) const {
        double th = (t - t0) / h;
        double s = 1.0 - th;
        const double* ri = r.data() + i;
        return ri[0] + th * (ri[n] + s * (ri[2 * n] + th * (ri[3 * n] + s * ri[4 * n])));
    }

    // time derivative of the interpolant
    double deriv_component(double t, int i) const {
        double th = (t - t0) / h;
        const double* ri = r.data() + i;
        double r2 = ri[n], r3 = ri[2 * n], r4 = ri[3 * n], r5 = ri[4 * n];
        double d = r2 + (1 - 2 * th) * r3 + th * (2 - 3 * th) * r4 + 2 * th * (1 - th) * (1 - 2 * th) * r5;
        return d / h;
    }
};

struct OdeOptions {
    double abs_tol = 1e-8;
    double rel_tol = 1e-6;
    // The controller aims two decades below the requested tolerance, so the
    // delivered global error sits well under the nominal figures.
    double tol_safety = 1e-2;
    double max_step = 0.0;  // 0: no cap
    double init_step = 0.0; // 0: auto
    double state_bound = 1e12;
    int max_rejects = 60;
};

// One adaptive integrator instance per trajectory; F is called as
// f(t, const double* y, double* dydt) with n components.
template <class F>
class Dopri5 {
  public:
    Dopri5(int n, F f, OdeOptions opts = {}) : n_(n), f_(std::move(f)), opts_(opts) {
        for (auto* v : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &y5_})
            v->assign(static_cast<std::size_t>(n_), 0.0);
        h_ = opts_.init_step;
    }

    void reset_step_size() { h_ = opts_.init_step; }

    // Call after the state is changed externally (events, jumps): the FSAL
    // stage is no longer valid.
    void invalidate_stages() { have_k1_ = false; }

    // Advances (t, y) by one accepted step, clamped so t never exceeds
    // t_limit. Fills `dense` for the accepted interval.
    void step(double& t, std::vector<double>& y, double t_limit, DenseStep& dense) {
        if (h_ <= 0) h_ = initial_step_guess(t, y, t_limit);
        int rejects = 0;
        for (;;) {
            double h = h_;
            if (opts_.max_step > 0) h = std::min(h, opts_.max_step);
            if (t + h > t_limit) h = t_limit - t;
            if (h <= 0) throw StepFailure("no room to step");
            double err = try_step(t, y, h);
            if (!(err <= 1.0)) { // also catches NaN
                ++rejects;
                if (rejects > opts_.max_rejects)
                    throw StepFailure("tolerances unmeetable near t = " + std::to_string(t));
                double fac = std::isnan(err) ? 0.1 : std::max(0.2, 0.9 * std::pow(err, -0.2));
                h_ = h * std::min(0.9, fac);
                continue;
            }
            // accepted: build dense output
            build_dense(t, h, y, dense);
            t += h;
            y = y5_;
            for (double v : y)
                if (std::fabs(v) > opts_.state_bound)
                    throw BlowUp("state escaped bound " + std::to_string(opts_.state_bound));
            double fac = err > 0 ? 0.9 * std::pow(err, -0.2) : 5.0;
            h_ = h * std::min(5.0, std::max(0.2, fac));
            k1_ = k7_; // FSAL
            have_k1_ = true;
            return;
        }
    }

  private:
    double initial_step_guess(double t, const std::vector<double>& y, double t_limit) {
        f_(t, y.data(), k1_.data());
        have_k1_ = true;
        double dnorm = 0, ynorm = 0;
        for (int i = 0; i < n_; ++i) {
            dnorm = std::max(dnorm, std::fabs(k1_[static_cast<std::size_t>(i)]));
            ynorm = std::max(ynorm, std::fabs(y[static_cast<std::size_t>(i)]));
        }
        double span = std::max(t_limit - t, 1e-12);
        double h = dnorm > 0 ? 0.01 * std::max(ynorm, 1.0) / dnorm : 0.01 * span;
        h = std::min(h, span);
        if (opts_.max_step > 0) h = std::min(h, opts_.max_step);
        return std::max(h, 1e-12);
    }

    // returns scaled error; fills k1..k7 and y5_
    double try_step(double t, const std::vector<double>& y, double h) {
        auto Y = [&](std::vector<double>& out, std::initializer_list<std::pair<const std::vector<double>*, double>> terms) {
            for (int i = 0; i < n_; ++i) {
                double acc = y[static_cast<std::size_t>(i)];
                for (const auto& [k, a] : terms)
                    acc += h * a * (*k)[static_cast<std::size_t>(i)];
                out[static_cast<std::size_t>(i)] = acc;
            }
        };
        if (!have_k1_) {
            f_(t, y.data(), k1_.data());
            have_k1_ = true;
        }
        Y(ytmp_, {{&k1_, 1.0 / 5}});
        f_(t + h / 5, ytmp_.data(), k2_.data());
        Y(ytmp_, {{&k1_, 3.0 / 40}, {&k2_, 9.0 / 40}});
        f_(t + 3 * h / 10, ytmp_.data(), k3_.data());
        Y(ytmp_, {{&k1_, 44.0 / 45}, {&k2_, -56.0 / 15}, {&k3_, 32.0 / 9}});
        f_(t + 4 * h / 5, ytmp_.data(), k4_.data());
        Y(ytmp_, {{&k1_, 19372.0 / 6561}, {&k2_, -25360.0 / 2187}, {&k3_, 64448.0 / 6561}, {&k4_, -212.0 / 729}});
        f_(t + 8 * h / 9, ytmp_.data(), k5_.data());
        Y(ytmp_, {{&k1_, 9017.0 / 3168}, {&k2_, -355.0 / 33}, {&k3_, 46732.0 / 5247}, {&k4_, 49.0 / 176}, {&k5_, -5103.0 / 18656}});
        f_(t + h, ytmp_.data(), k6_.data());
        Y(y5_, {{&k1_, 35.0 / 384}, {&k3_, 500.0 / 1113}, {&k4_, 125.0 / 192}, {&k5_, -2187.0 / 6784}, {&k6_, 11.0 / 84}});
        f_(t + h, y5_.data(), k7_.data());

        static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                                e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
        double err = 0;
        for (int i = 0; i < n_; ++i) {
            std::size_t s = static_cast<std::size_t>(i);
            double e = h * (e1 * k1_[s] + e3 * k3_[s] + e4 * k4_[s] + e5 * k5_[s] + e6 * k6_[s] + e7 * k7_[s]);
            double sc = opts_.tol_safety *
                        (opts_.abs_tol + opts_.rel_tol * std::max(std::fabs(y[s]), std::fabs(y5_[s])));
            err += (e / sc) * (e / sc);
        }
        return std::sqrt(err / n_);
    }

    void build_dense(double t, double h, const std::vector<double>& y, DenseStep& dense) {
        static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                                d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                                d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
        dense.t0 = t;
        dense.h = h;
        dense.n = n_;
        dense.r.resize(static_cast<std::size_t>(5 * n_));
        for (int i = 0; i < n_; ++i) {
            std::size_t s = static_cast<std::size_t>(i);
            double ydiff = y5_[s] - y[s];
            double bspl = h * k1_[s] - ydiff;
            dense.r[s] = y[s];
            dense.r[s + static_cast<std::size_t>(n_)] = ydiff;
            dense.r[s + static_cast<std::size_t>(2 * n_)] = bspl;
            dense.r[s + static_cast<std::size_t>(3 * n_)] = ydiff - h * k7_[s] - bspl;
            dense.r[s + static_cast<std::size_t>(4 * n_)] =
                h * (d1 * k1_[s] + d3 * k3_[s] + d4 * k4_[s] + d5 * k5_[s] + d6 * k6_[s] + d7 * k7_[s]);
        }
    }

    int n_;
    F f_;
    OdeOptions opts_;
    double h_ = 0;
    bool have_k1_ = false;
    std::vector<double> k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, y5_;
};

} // namespace hypops
