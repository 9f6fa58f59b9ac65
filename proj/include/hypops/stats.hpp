#pragma once

// Ensemble statistics: time-grid means/variances, empirical CDFs at probe
// times, jump-time histograms and two-sample Kolmogorov-Smirnov comparisons.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hypops/errors.hpp"

namespace hypops {

// sup-norm distance between the empirical CDFs of two samples
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty())
        throw EmptySample("KS statistic needs non-empty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double na = static_cast<double>(a.size());
    double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

// one-sample KS against a CDF callable (test utility)
template <class Cdf>
inline double ks_one_sample(std::vector<double> a, Cdf&& cdf) {
    if (a.empty())
        throw EmptySample("KS statistic needs a non-empty sample");
    std::sort(a.begin(), a.end());
    double n = static_cast<double>(a.size());
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double f = cdf(a[i]);
        d = std::max(d, std::fabs((i + 1) / n - f));
        d = std::max(d, std::fabs(i / n - f));
    }
    return d;
}

struct ProbeKey {
    double time = 0;
    std::string variable;
    bool operator<(const ProbeKey& o) const {
        if (time != o.time) return time < o.time;
        return variable < o.variable;
    }
};

struct Histogram {
    double lo = 0, hi = 1;
    std::vector<long long> bins;
    long long total = 0;

    void init(double l, double h, int n) {
        lo = l;
        hi = h;
        bins.assign(static_cast<std::size_t>(n), 0);
        total = 0;
    }
    void add(double x) {
        if (bins.empty()) return;
        double f = (x - lo) / (hi - lo);
        int i = static_cast<int>(f * static_cast<double>(bins.size()));
        i = std::max(0, std::min(static_cast<int>(bins.size()) - 1, i));
        ++bins[static_cast<std::size_t>(i)];
        ++total;
    }
};

struct EnsembleStats {
    std::string label;
    long long replicates = 0;
    long long failed_replicates = 0;
    std::vector<std::string> errors;

    // per grid time: mean and variance per variable
    std::vector<double> grid;
    std::vector<std::string> variable_names;
    std::vector<std::vector<double>> mean;     // [grid][var]
    std::vector<std::vector<double>> variance; // [grid][var]

    // per probe: all replicate values, kept sorted on finalize
    std::map<ProbeKey, std::vector<double>> probe_samples;

    // first-firing times and histograms per named transition
    std::map<std::string, std::vector<double>> first_firing;
    std::map<std::string, Histogram> jump_time_hist;

    // fraction of observed time per discrete-mode valuation (stringified)
    std::map<std::string, double> mode_occupancy;

    void finalize() {
        for (auto& [k, v] : probe_samples)
            std::sort(v.begin(), v.end());
        double total = 0;
        for (auto& [k, v] : mode_occupancy)
            total += v;
        if (total > 0)
            for (auto& [k, v] : mode_occupancy)
                v /= total;
    }

    const std::vector<double>& samples(double time, const std::string& variable) const {
        auto it = probe_samples.find(ProbeKey{time, variable});
        if (it == probe_samples.end())
            throw EmptySample("no probe recorded at t=" + std::to_string(time) + " for " + variable);
        return it->second;
    }

    std::vector<std::pair<double, double>> ecdf(double time, const std::string& variable) const {
        const auto& s = samples(time, variable);
        std::vector<std::pair<double, double>> out;
        double n = static_cast<double>(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            out.emplace_back(s[i], (i + 1) / n);
        return out;
    }
};

// Welford-style accumulation helper used while replicates stream in.
struct RunningMoments {
    std::vector<std::vector<double>> mean, m2;
    long long count = 0;

    void init(std::size_t grid, std::size_t vars) {
        mean.assign(grid, std::vector<double>(vars, 0.0));
        m2.assign(grid, std::vector<double>(vars, 0.0));
        count = 0;
    }
    void add(const std::vector<std::vector<double>>& values) {
        ++count;
        for (std::size_t g = 0; g < values.size(); ++g)
            for (std::size_t v = 0; v < values[g].size(); ++v) {
                double d = values[g][v] - mean[g][v];
                mean[g][v] += d / static_cast<double>(count);
                m2[g][v] += d * (values[g][v] - mean[g][v]);
            }
    }
    void store(EnsembleStats& out) const {
        out.mean = mean;
        out.variance = m2;
        for (auto& row : out.variance)
            for (auto& v : row)
                v = count > 1 ? v / static_cast<double>(count - 1) : 0.0;
    }
};

// ---------------------------------------------------------------------------
// Convergence report

struct ConvergenceRow {
    ProbeKey probe;
    std::vector<double> sizes;
    std::vector<double> ks;        // KS(CTMC at size, reference)
    std::vector<double> mean_diff; // |mean_ctmc - mean_ref|
    bool monotone = false;         // KS non-increasing within the noise allowance
    bool converged = false;        // final KS at the same-distribution acceptance level
    bool pass = false;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    double allowance = 0;
    double accept_level = 0;
    bool pass = false;

    std::string verdict() const { return pass ? "pass" : "fail"; }
};

inline double sample_mean(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v)
        acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Compares CTMC ensembles along a size ladder against a reference (the
// limit-process ensemble). Pass requires the KS distance to be non-increasing
// in the size within the statistical noise allowance 2/sqrt(reps), and the
// final KS to sit either at the same-distribution acceptance level or at
// least one allowance below the first size's KS.
inline ConvergenceReport convergence_report(const std::vector<std::pair<double, const EnsembleStats*>>& ctmc,
                                            const EnsembleStats& reference,
                                            const std::vector<ProbeKey>& probes) {
    ConvergenceReport report;
    if (ctmc.empty())
        throw EmptySample("convergence report needs at least one size");
    long long reps = ctmc.front().second->replicates;
    for (const auto& [size, stats] : ctmc)
        reps = std::min(reps, stats->replicates);
    reps = std::min(reps, reference.replicates);
    report.allowance = 2.0 / std::sqrt(static_cast<double>(std::max<long long>(reps, 1)));
    report.accept_level = 1.63 * std::sqrt(2.0 / static_cast<double>(std::max<long long>(reps, 1)));

    report.pass = true;
    for (const auto& probe : probes) {
        ConvergenceRow row;
        row.probe = probe;
        const auto& ref_samples = reference.samples(probe.time, probe.variable);
        double ref_mean = sample_mean(ref_samples);
        for (const auto& [size, stats] : ctmc) {
            const auto& s = stats->samples(probe.time, probe.variable);
            row.sizes.push_back(size);
            row.ks.push_back(ks_two_sample(s, ref_samples));
            row.mean_diff.push_back(std::fabs(sample_mean(s) - ref_mean));
        }
        row.monotone = true;
        for (std::size_t i = 1; i < row.ks.size(); ++i)
            if (row.ks[i] > row.ks[i - 1] + report.allowance) row.monotone = false;
        double final_ks = row.ks.back();
        row.converged = final_ks <= report.accept_level ||
                        (row.ks.size() > 1 && final_ks <= row.ks.front() - report.allowance);
        row.pass = row.monotone && row.converged;
        report.pass = report.pass && row.pass;
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline std::string to_csv(const ConvergenceReport& r) {
    std::ostringstream os;
    os << "probe_time,variable,size,ks,mean_diff,monotone,converged,verdict\n";
    os.precision(17);
    for (const auto& row : r.rows)
        for (std::size_t i = 0; i < row.sizes.size(); ++i)
            os << row.probe.time << ',' << row.probe.variable << ',' << row.sizes[i] << ',' << row.ks[i] << ','
               << row.mean_diff[i] << ',' << (row.monotone ? 1 : 0) << ',' << (row.converged ? 1 : 0) << ','
               << (row.pass ? "pass" : "fail") << '\n';
    return os.str();
}

} // namespace hypops
