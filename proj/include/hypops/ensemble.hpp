#pragma once

// Experiment orchestration: replicate ensembles of the jump process across a
// size ladder, limit-process ensembles, statistics aggregation and the
// convergence report. Replicates run on parallel workers with splittable
// seeding; aggregation is a single-threaded reduce in replicate order, so
// results are independent of the worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hypops/ctmc.hpp"
#include "hypops/errors.hpp"
#include "hypops/normalize.hpp"
#include "hypops/parser.hpp"
#include "hypops/pdmp.hpp"
#include "hypops/stats.hpp"
#include "hypops/tdsha.hpp"

namespace hypops {

struct ExperimentConfig {
    std::string model_path;
    std::string mode = "compare"; // compare | ctmc | pdmp | fluid
    std::vector<double> sizes = {100, 1000};
    double horizon = 100;
    double grid_step = 1.0;
    std::vector<ProbeKey> probes;
    long long reps = 100;
    long long pdmp_reps = 0; // 0: same as reps
    std::uint64_t seed = 1;
    std::string out_dir;
    bool assert_converges = false;
    std::string stop_on; // finish replicates once this action fired
    int max_chain = 1;
    std::map<std::string, double> param_overrides;
    std::map<std::string, std::string> class_overrides; // action -> continuous|discrete
    PdmpOptions pdmp;

    // observation grid; probe times are always grid members
    std::vector<double> grid() const {
        std::vector<double> g;
        for (double t = 0; t <= horizon + 1e-12; t += grid_step)
            g.push_back(std::min(t, horizon));
        if (g.empty() || g.back() < horizon - 1e-12) g.push_back(horizon);
        for (const auto& p : probes)
            if (p.time <= horizon + 1e-12) g.push_back(std::min(p.time, horizon));
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end(), [](double a, double b) { return std::fabs(a - b) < 1e-9; }),
                g.end());
        return g;
    }
};

inline int worker_count(long long reps) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("HYPOPS_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) hw = static_cast<unsigned>(v);
    }
    return static_cast<int>(std::min<long long>(hw, std::max<long long>(reps, 1)));
}

// ---------------------------------------------------------------------------
// Config file: one `key = value` per line, `#` or `//` comments.
// Keys: model, mode, sizes, horizon, grid, probes (t:var;t:var), reps,
// pdmp_reps, seed, out_dir, assert_converges, stop_on, max_chain,
// param.<name>, class.<action>, abs_tol, rel_tol.

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::size_t sl = line.find("//");
        if (sl != std::string::npos) line = line.substr(0, sl);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto as_double = [&](const std::string& v) {
            char* end = nullptr;
            double x = std::strtod(v.c_str(), &end);
            if (end == v.c_str()) throw ConfigError("config line " + std::to_string(lineno) + ": bad number");
            return x;
        };
        if (key == "model") cfg.model_path = value;
        else if (key == "mode") cfg.mode = value;
        else if (key == "sizes") {
            cfg.sizes.clear();
            std::istringstream vs(value);
            std::string tok;
            while (std::getline(vs, tok, ','))
                cfg.sizes.push_back(as_double(trim(tok)));
        } else if (key == "horizon") cfg.horizon = as_double(value);
        else if (key == "grid") cfg.grid_step = as_double(value);
        else if (key == "probes") {
            std::istringstream vs(value);
            std::string tok;
            while (std::getline(vs, tok, ';')) {
                tok = trim(tok);
                if (tok.empty()) continue;
                std::size_t colon = tok.find(':');
                if (colon == std::string::npos)
                    throw ConfigError("config line " + std::to_string(lineno) + ": probe needs time:variable");
                ProbeKey pk;
                pk.time = as_double(trim(tok.substr(0, colon)));
                pk.variable = trim(tok.substr(colon + 1));
                cfg.probes.push_back(pk);
            }
        } else if (key == "reps") cfg.reps = static_cast<long long>(as_double(value));
        else if (key == "pdmp_reps") cfg.pdmp_reps = static_cast<long long>(as_double(value));
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_double(value));
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "assert_converges") cfg.assert_converges = value == "true" || value == "1";
        else if (key == "stop_on") cfg.stop_on = value;
        else if (key == "max_chain") cfg.max_chain = static_cast<int>(as_double(value));
        else if (key == "abs_tol") cfg.pdmp.ode.abs_tol = as_double(value);
        else if (key == "rel_tol") cfg.pdmp.ode.rel_tol = as_double(value);
        else if (key.rfind("param.", 0) == 0) cfg.param_overrides[key.substr(6)] = as_double(value);
        else if (key.rfind("class.", 0) == 0) cfg.class_overrides[key.substr(6)] = value;
        else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = parse_config(ss.str());
    return cfg;
}

// Applies parameter and class overrides to a parsed program.
inline Program apply_overrides(Program p, const ExperimentConfig& cfg) {
    for (const auto& [name, value] : cfg.param_overrides) {
        if (!p.params.count(name))
            throw ConfigError("override of unknown parameter '" + name + "'");
        p.params[name] = value;
    }
    for (auto& comp : p.components)
        for (auto& act : comp.actions) {
            auto it = cfg.class_overrides.find(act.name);
            if (it == cfg.class_overrides.end()) continue;
            if (act.kind == ActionKind::Instantaneous)
                throw ConfigError("instantaneous action '" + act.name + "' cannot be reclassified");
            act.cls = it->second == "continuous" ? ActionClass::Continuous : ActionClass::Discrete;
        }
    return p;
}

// ---------------------------------------------------------------------------
// Per-replicate collection

namespace detail {

struct ReplicateData {
    bool failed = false;
    std::string error;
    std::vector<std::vector<double>> grid_values; // [grid][var] normalized
    std::map<ProbeKey, double> probe_values;
    std::vector<double> first_firing;          // per action, NaN when it never fired
    std::map<std::string, double> first_named; // limit-process path (jumps are rare)
    std::map<std::string, double> mode_time;
};

} // namespace detail

// Runs a jump-process ensemble at one size. Continuous-class populations are
// reported normalized by the size so they are comparable with the limit
// process.
inline EnsembleStats run_ctmc_ensemble(const Program& raw, double size, const ExperimentConfig& cfg,
                                       std::uint64_t experiment_index) {
    SimModel model(raw, size);
    const Program& p = model.program();
    std::vector<double> grid = cfg.grid();
    long long reps = cfg.reps;

    int stop_action = -1;
    if (!cfg.stop_on.empty()) {
        for (std::size_t i = 0; i < model.action_names().size(); ++i)
            if (model.action_names()[i] == cfg.stop_on) stop_action = static_cast<int>(i);
        if (stop_action < 0) throw ConfigError("stop_on names unknown action '" + cfg.stop_on + "'");
    }

    std::vector<detail::ReplicateData> data(static_cast<std::size_t>(reps));
    std::atomic<long long> next{0};

    auto normalize_values = [&](const std::vector<double>& values) {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            out[i] = values[i];
            if (p.variables[i].kind == VarKind::Continuous) out[i] /= size;
        }
        return out;
    };

    // actions that can change a discrete variable (mode bookkeeping only
    // needs attention on those events)
    std::vector<char> touches_discrete(model.action_names().size(), 0);
    {
        std::size_t idx = 0;
        for (const auto& comp : p.components)
            for (const auto& act : comp.actions) {
                for (const auto& u : act.reset.updates) {
                    const VariableDecl* v = p.find_var(u.target);
                    if (v && v->kind == VarKind::Discrete) touches_discrete[idx] = 1;
                }
                ++idx;
            }
    }

    auto worker = [&]() {
        for (;;) {
            long long k = next.fetch_add(1);
            if (k >= reps) return;
            detail::ReplicateData& rd = data[static_cast<std::size_t>(k)];
            try {
                SplitRng rng = SplitRng::for_replicate(cfg.seed, experiment_index, static_cast<std::uint64_t>(k));
                CtmcState s = model.initial_state();

                rd.grid_values.assign(grid.size(), {});
                rd.first_firing.assign(model.action_names().size(),
                                       std::numeric_limits<double>::quiet_NaN());
                std::size_t next_grid = 0;
                std::vector<double> last_values = s.values;
                double mode_enter_t = 0;

                auto mode_of = [&](const std::vector<double>& v) {
                    std::string key;
                    for (std::size_t i = 0; i < p.variables.size(); ++i)
                        if (p.variables[i].kind == VarKind::Discrete) {
                            key += std::to_string(static_cast<long long>(v[i]));
                            key += ',';
                        }
                    return key;
                };
                std::string mode_key = mode_of(s.values);

                auto observer = [&](const CtmcState& st, int action, EventKind) {
                    while (next_grid < grid.size() && grid[next_grid] < st.time) {
                        rd.grid_values[next_grid] = normalize_values(last_values);
                        ++next_grid;
                    }
                    auto a = static_cast<std::size_t>(action);
                    if (std::isnan(rd.first_firing[a])) rd.first_firing[a] = st.time;
                    if (touches_discrete[a]) {
                        rd.mode_time[mode_key] += st.time - mode_enter_t;
                        mode_key = mode_of(st.values);
                        mode_enter_t = st.time;
                    }
                    last_values = st.values;
                };

                SimOptions opts;
                opts.max_chain = cfg.max_chain;
                opts.record_events = false;
                opts.stop_after_action = stop_action;
                Trajectory traj = simulate_ctmc(model, s, cfg.horizon, rng, opts, observer);

                while (next_grid < grid.size()) {
                    rd.grid_values[next_grid] = normalize_values(last_values);
                    ++next_grid;
                }
                rd.mode_time[mode_key] += traj.final_state.time - mode_enter_t;
                for (const auto& probe : cfg.probes) {
                    int slot = p.var_index(probe.variable);
                    if (slot < 0) throw ConfigError("probe names unknown variable '" + probe.variable + "'");
                    // state at the probe time is the grid sample at that time
                    std::size_t gi = 0;
                    while (gi + 1 < grid.size() && grid[gi] < probe.time - 1e-12) ++gi;
                    rd.probe_values[probe] = rd.grid_values[gi][static_cast<std::size_t>(slot)];
                }
            } catch (const Error& err) {
                rd.failed = true;
                rd.error = err.what();
            }
        }
    };

    int workers = worker_count(reps);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back(worker);
    for (auto& th : pool)
        th.join();

    // ordered reduce
    EnsembleStats stats;
    stats.label = "ctmc@" + std::to_string(size);
    stats.grid = grid;
    for (const auto& v : p.variables)
        stats.variable_names.push_back(v.name);
    RunningMoments moments;
    moments.init(grid.size(), p.variables.size());
    for (const auto& name : model.action_names()) {
        Histogram h;
        h.init(0, cfg.horizon, 200);
        stats.jump_time_hist[name] = h;
    }
    for (long long k = 0; k < reps; ++k) {
        const auto& rd = data[static_cast<std::size_t>(k)];
        if (rd.failed) {
            ++stats.failed_replicates;
            if (stats.errors.size() < 16) stats.errors.push_back(rd.error);
            continue;
        }
        ++stats.replicates;
        moments.add(rd.grid_values);
        for (const auto& [probe, value] : rd.probe_values)
            stats.probe_samples[probe].push_back(value);
        for (std::size_t a = 0; a < rd.first_firing.size(); ++a) {
            if (std::isnan(rd.first_firing[a])) continue;
            const std::string& name = model.action_names()[a];
            stats.first_firing[name].push_back(rd.first_firing[a]);
            stats.jump_time_hist[name].add(rd.first_firing[a]);
        }
        for (const auto& [mode, dt] : rd.mode_time)
            stats.mode_occupancy[mode] += dt;
    }
    moments.store(stats);
    stats.finalize();
    return stats;
}

// Limit-process (or finite-size hybrid) ensemble.
inline EnsembleStats run_pdmp_ensemble(const PdmpModel& model, const ExperimentConfig& cfg,
                                       std::uint64_t experiment_index, long long reps_override = 0) {
    const Program& p = model.program();
    std::vector<double> grid = cfg.grid();
    long long reps = reps_override > 0 ? reps_override : (cfg.pdmp_reps > 0 ? cfg.pdmp_reps : cfg.reps);

    std::vector<detail::ReplicateData> data(static_cast<std::size_t>(reps));
    std::atomic<long long> next{0};

    PdmpOptions popts = cfg.pdmp;
    popts.sample_times = grid;

    auto worker = [&]() {
        for (;;) {
            long long k = next.fetch_add(1);
            if (k >= reps) return;
            detail::ReplicateData& rd = data[static_cast<std::size_t>(k)];
            try {
                SplitRng rng = SplitRng::for_replicate(cfg.seed, experiment_index, static_cast<std::uint64_t>(k));
                PdmpTrajectory traj = simulate_pdmp(model, cfg.horizon, rng, popts);
                rd.grid_values.assign(grid.size(), std::vector<double>(p.variables.size(), 0.0));
                for (std::size_t g = 0; g < grid.size() && g < traj.samples.size(); ++g)
                    for (std::size_t v = 0; v < p.variables.size(); ++v)
                        rd.grid_values[g][v] = traj.samples[g].second[v];
                for (const auto& jump : traj.jumps)
                    if (!rd.first_named.count(jump.name)) rd.first_named[jump.name] = jump.t;
                for (const auto& probe : cfg.probes) {
                    int slot = p.var_index(probe.variable);
                    if (slot < 0) throw ConfigError("probe names unknown variable '" + probe.variable + "'");
                    std::size_t gi = 0;
                    while (gi + 1 < grid.size() && grid[gi] < probe.time - 1e-12) ++gi;
                    rd.probe_values[probe] = rd.grid_values[gi][static_cast<std::size_t>(slot)];
                }
            } catch (const Error& err) {
                rd.failed = true;
                rd.error = err.what();
            }
        }
    };

    int workers = worker_count(reps);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back(worker);
    for (auto& th : pool)
        th.join();

    EnsembleStats stats;
    stats.label = "pdmp";
    stats.grid = grid;
    for (const auto& v : p.variables)
        stats.variable_names.push_back(v.name);
    RunningMoments moments;
    moments.init(grid.size(), p.variables.size());
    for (long long k = 0; k < reps; ++k) {
        const auto& rd = data[static_cast<std::size_t>(k)];
        if (rd.failed) {
            ++stats.failed_replicates;
            if (stats.errors.size() < 16) stats.errors.push_back(rd.error);
            continue;
        }
        ++stats.replicates;
        moments.add(rd.grid_values);
        for (const auto& [probe, value] : rd.probe_values)
            stats.probe_samples[probe].push_back(value);
        for (const auto& [name, t] : rd.first_named) {
            stats.first_firing[name].push_back(t);
            auto it = stats.jump_time_hist.find(name);
            if (it == stats.jump_time_hist.end()) {
                Histogram h;
                h.init(0, cfg.horizon, 200);
                stats.jump_time_hist[name] = h;
            }
            stats.jump_time_hist[name].add(t);
        }
    }
    moments.store(stats);
    stats.finalize();
    return stats;
}

// ---------------------------------------------------------------------------
// Whole-experiment driver used by the `compare` subcommand.

struct CompareResult {
    std::map<double, EnsembleStats> ctmc;
    EnsembleStats pdmp;
    ConvergenceReport report;
};

inline PdmpModel build_limit_pdmp(const Program& flat) {
    Program norm = normalize(flat, NormalizeMode::Limit);
    return assemble_pdmp(build_tdsha(norm));
}

inline CompareResult run_compare(const Program& parsed, const ExperimentConfig& cfg) {
    Program flat = flatten(parsed);
    validate_or_throw(flat);

    CompareResult result;
    std::uint64_t experiment = 0;
    for (double size : cfg.sizes)
        result.ctmc.emplace(size, run_ctmc_ensemble(flat, size, cfg, experiment++));
    PdmpModel limit = build_limit_pdmp(flat);
    result.pdmp = run_pdmp_ensemble(limit, cfg, experiment++);

    std::vector<std::pair<double, const EnsembleStats*>> ladder;
    for (const auto& [size, stats] : result.ctmc)
        ladder.emplace_back(size, &stats);
    result.report = convergence_report(ladder, result.pdmp, cfg.probes);
    return result;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string grid_csv(const EnsembleStats& s) {
    std::ostringstream os;
    os.precision(17);
    os << "t";
    for (const auto& n : s.variable_names)
        os << ",mean_" << n << ",var_" << n;
    os << "\n";
    for (std::size_t g = 0; g < s.grid.size(); ++g) {
        os << s.grid[g];
        for (std::size_t v = 0; v < s.variable_names.size(); ++v)
            os << ',' << s.mean[g][v] << ',' << s.variance[g][v];
        os << "\n";
    }
    return os.str();
}

inline std::string summary_csv(const EnsembleStats& s) {
    std::ostringstream os;
    os.precision(17);
    os << "metric,key,value\n";
    os << "replicates,," << s.replicates << "\n";
    os << "failed_replicates,," << s.failed_replicates << "\n";
    for (const auto& [probe, samples] : s.probe_samples) {
        os << "probe_mean," << probe.variable << "@" << probe.time << ',' << sample_mean(samples) << "\n";
    }
    for (const auto& [name, times] : s.first_firing)
        os << "first_firing_count," << name << ',' << times.size() << "\n";
    for (const auto& [mode, fraction] : s.mode_occupancy)
        os << "mode_occupancy,\"" << mode << "\"," << fraction << "\n";
    return os.str();
}

inline std::string cdf_csv(const EnsembleStats& s) {
    std::ostringstream os;
    os.precision(17);
    os << "probe_time,variable,value,cdf\n";
    for (const auto& [probe, samples] : s.probe_samples) {
        double n = static_cast<double>(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i)
            os << probe.time << ',' << probe.variable << ',' << samples[i] << ',' << (i + 1) / n << "\n";
    }
    return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << content;
}

} // namespace hypops
