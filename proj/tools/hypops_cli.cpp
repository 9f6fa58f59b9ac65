// Command-line front end: parse/check models, run jump-process and
// limit-process ensembles, dump the transition automaton and drive full
// convergence comparisons.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hypops/ensemble.hpp"
#include "hypops/scaling.hpp"

using nlohmann::json;
using namespace hypops;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitModelError = 1;
constexpr int kExitRuntimeError = 2;
constexpr int kExitVerdictFail = 3;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Program load_model(const std::string& path, const std::map<std::string, double>& params,
                   const std::map<std::string, std::string>& classes) {
    SourceModel src = parse_source(slurp(path), path);
    if (!src.ok()) {
        std::cerr << src.diagnostics_text();
        throw ParseError("model '" + path + "' failed to load");
    }
    ExperimentConfig overrides;
    overrides.param_overrides = params;
    overrides.class_overrides = classes;
    Program p = apply_overrides(*src.program, overrides);
    p = flatten(p);
    validate_or_throw(p);
    return p;
}

std::map<std::string, double> parse_param_opts(const std::vector<std::string>& kvs) {
    std::map<std::string, double> out;
    for (const auto& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects name=value");
        out[kv.substr(0, eq)] = std::strtod(kv.c_str() + eq + 1, nullptr);
    }
    return out;
}

std::map<std::string, std::string> parse_class_opts(const std::vector<std::string>& kvs) {
    std::map<std::string, std::string> out;
    for (const auto& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--class expects action=continuous|discrete");
        out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return out;
}

std::string csv_number(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

void write_ctmc_trajectory_csv(const std::string& path, const SimModel& model, const Trajectory& traj,
                               std::optional<double> size_for_normalization) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    const Program& p = model.program();
    out << "t,action,kind";
    for (const auto& v : p.variables)
        out << ',' << v.name;
    out << '\n';
    std::vector<double> values = traj.initial.values;
    auto emit = [&](double t, const std::string& action, const char* kind) {
        out << csv_number(t) << ',' << action << ',' << kind;
        for (std::size_t i = 0; i < values.size(); ++i) {
            double v = values[i];
            if (size_for_normalization && p.variables[i].kind == VarKind::Continuous)
                v /= *size_for_normalization;
            out << ',' << csv_number(v);
        }
        out << '\n';
    };
    emit(0.0, "init", "init");
    for (const auto& ev : traj.events) {
        for (const auto& [slot, value] : ev.delta)
            values[static_cast<std::size_t>(slot)] = value;
        const char* kind = ev.kind == EventKind::Stochastic ? "stochastic"
                           : ev.kind == EventKind::Timed   ? "timed"
                                                            : "instantaneous";
        emit(ev.time, model.action_names()[static_cast<std::size_t>(ev.action)], kind);
    }
}

void write_pdmp_trajectory_csv(const std::string& path, const PdmpModel& model, const PdmpTrajectory& traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    const Program& p = model.program();
    out << "t,kind,transition";
    for (const auto& v : p.variables)
        out << ',' << v.name;
    if (model.has_time_monitor()) out << ",Time";
    out << '\n';
    auto emit = [&](double t, const std::string& kind, const std::string& name, const std::vector<double>& y) {
        out << csv_number(t) << ',' << kind << ',' << name;
        for (int i = 0; i < model.n_state(); ++i)
            out << ',' << csv_number(y[static_cast<std::size_t>(i)]);
        out << '\n';
    };
    std::size_t j = 0;
    for (const auto& [t, y] : traj.samples) {
        while (j < traj.jumps.size() && traj.jumps[j].t <= t) {
            const auto& jmp = traj.jumps[j];
            emit(jmp.t, jmp.kind == PdmpJumpRecord::Kind::Stochastic ? "stochastic" : "boundary", jmp.name,
                 jmp.post);
            ++j;
        }
        emit(t, "sample", "-", y);
    }
    for (; j < traj.jumps.size(); ++j)
        emit(traj.jumps[j].t,
             traj.jumps[j].kind == PdmpJumpRecord::Kind::Stochastic ? "stochastic" : "boundary",
             traj.jumps[j].name, traj.jumps[j].post);
}

void write_pdmp_diagnostics_jsonl(const std::string& path, const PdmpTrajectory& traj) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    for (const auto& jmp : traj.jumps) {
        if (jmp.kind != PdmpJumpRecord::Kind::Boundary) continue;
        json j{{"type", "boundary_jump"},
               {"t", jmp.t},
               {"transition", jmp.name},
               {"margin", jmp.margin},
               {"tangential", jmp.tangential},
               {"multi_guard", jmp.multi_guard}};
        out << j.dump() << '\n';
    }
    for (const auto& slide : traj.slides) {
        json j{{"type", "slide"},
               {"surface", slide.key},
               {"t_enter", slide.t_enter},
               {"t_exit", slide.t_exit},
               {"exit_reason", slide.exit_reason},
               {"max_abs_h", slide.max_abs_h},
               {"alpha_min", slide.alpha_min},
               {"alpha_max", slide.alpha_max}};
        out << j.dump() << '\n';
    }
    for (const auto& [key, fraction] : traj.diagnostics.ts_surface_dwell) {
        json j{{"type", "stochastic_guard_dwell"}, {"surface", key}, {"fraction", fraction}};
        out << j.dump() << '\n';
    }
    if (traj.diagnostics.negative_rate_clamps > 0) {
        json j{{"type", "negative_rate_clamped"}, {"count", traj.diagnostics.negative_rate_clamps}};
        out << j.dump() << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hypops: simulation toolkit for hybrid population models"};
    app.require_subcommand(1);

    std::string model_path, config_path, out_path, traj_path, diag_path;
    std::vector<std::string> set_opts, class_opts;
    double size = 0;
    long long reps = 1;
    std::uint64_t seed = 1;
    double horizon = 100;
    double grid_step = 1;
    bool dense = false;
    bool force = false;
    int max_chain = 1;
    std::string stop_on;
    std::vector<double> check_sizes;
    int check_samples = 64;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("model", model_path, "model file (.sccp)")->required();
        cmd->add_option("--set", set_opts, "parameter override name=value");
        cmd->add_option("--class", class_opts, "class override action=continuous|discrete");
    };

    auto* parse_cmd = app.add_subcommand("parse", "parse and validate a model");
    add_common(parse_cmd);

    auto* check_cmd = app.add_subcommand("check", "numeric scaling report");
    add_common(check_cmd);
    check_cmd->add_option("--sizes", check_sizes, "size ladder for the checks");
    check_cmd->add_option("--samples", check_samples, "sample states per size");
    check_cmd->add_option("--seed", seed, "root seed");
    check_cmd->add_option("--out", out_path, "write the CSV report here");

    auto* sim_cmd = app.add_subcommand("simulate", "exact jump-process simulation");
    add_common(sim_cmd);
    sim_cmd->add_option("--size", size, "system size")->required();
    sim_cmd->add_option("--reps", reps, "replicates");
    sim_cmd->add_option("--seed", seed, "root seed");
    sim_cmd->add_option("--horizon", horizon, "time horizon");
    sim_cmd->add_option("--grid", grid_step, "observation grid step");
    sim_cmd->add_option("--out", out_path, "output directory");
    sim_cmd->add_option("--trajectory", traj_path, "write one event-level trajectory CSV (replicate 0)");
    sim_cmd->add_flag("--dense", dense, "store full pre/post states in trajectories");
    sim_cmd->add_option("--max-chain", max_chain, "instantaneous chain limit per instant");
    sim_cmd->add_option("--stop-on", stop_on, "finish a replicate after this action fires");

    auto* pdmp_cmd = app.add_subcommand("pdmp", "simulate the limit (or finite-size) hybrid process");
    add_common(pdmp_cmd);
    pdmp_cmd->add_option("--size", size, "finite size (default: limit process)");
    pdmp_cmd->add_option("--reps", reps, "replicates");
    pdmp_cmd->add_option("--seed", seed, "root seed");
    pdmp_cmd->add_option("--horizon", horizon, "time horizon");
    pdmp_cmd->add_option("--grid", grid_step, "observation grid step");
    pdmp_cmd->add_option("--out", out_path, "output directory");
    pdmp_cmd->add_option("--trajectory", traj_path, "write one trajectory CSV (replicate 0)");
    pdmp_cmd->add_option("--diagnostics", diag_path, "write diagnostics JSON-lines (replicate 0)");

    auto* fluid_cmd = app.add_subcommand("fluid", "deterministic fluid solution");
    add_common(fluid_cmd);
    fluid_cmd->add_option("--horizon", horizon, "time horizon");
    fluid_cmd->add_option("--grid", grid_step, "observation grid step");
    fluid_cmd->add_option("--trajectory", traj_path, "write the solution CSV");

    auto* dump_cmd = app.add_subcommand("dump-tdsha", "print the transition automaton");
    add_common(dump_cmd);
    dump_cmd->add_option("--size", size, "finite size (default: limit)");

    bool assert_converges = false;
    auto* compare_cmd = app.add_subcommand("compare", "size ladder vs limit process, with verdict");
    compare_cmd->add_option("config", config_path, "experiment config file")->required();
    compare_cmd->add_flag("--assert-converges", assert_converges, "exit 3 when the convergence verdict fails");
    compare_cmd->add_flag("--force", force, "run even when the scaling check fails");

    CLI11_PARSE(app, argc, argv);

    try {
        if (parse_cmd->parsed()) {
            SourceModel src = parse_source(slurp(model_path), model_path);
            if (!src.ok()) {
                std::cerr << src.diagnostics_text();
                return kExitModelError;
            }
            const Program& p = *src.program;
            std::size_t actions = 0;
            for (const auto& c : p.components)
                actions += c.actions.size();
            std::cout << "ok: " << p.components.size() << " agents, " << actions << " actions, "
                      << p.variables.size() << " variables\n";
            for (const auto& d : src.validation)
                std::cout << d.str() << "\n";
            return kExitOk;
        }

        auto params = parse_param_opts(set_opts);
        auto classes = parse_class_opts(class_opts);

        if (check_cmd->parsed()) {
            Program p = load_model(model_path, params, classes);
            ScalingOptions opts;
            if (!check_sizes.empty()) opts.n_grid = check_sizes;
            opts.samples = check_samples;
            ScalingReport report = check_scalings(p, opts, SplitRng(seed));
            std::string csv = report.to_csv();
            if (!out_path.empty())
                write_file(out_path, csv);
            else
                std::cout << csv;
            for (const auto& r : report.remarks)
                std::cerr << "note: " << r << "\n";
            std::cout << (report.all_pass ? "scaling: pass\n" : "scaling: fail\n");
            return kExitOk;
        }

        if (sim_cmd->parsed()) {
            Program p = load_model(model_path, params, classes);
            ExperimentConfig cfg;
            cfg.reps = reps;
            cfg.seed = seed;
            cfg.horizon = horizon;
            cfg.grid_step = grid_step;
            cfg.stop_on = stop_on;
            cfg.max_chain = max_chain;
            if (!traj_path.empty()) {
                SimModel model(p, size);
                SplitRng rng = SplitRng::for_replicate(seed, 0, 0);
                SimOptions opts;
                opts.max_chain = max_chain;
                opts.dense = dense;
                if (!stop_on.empty()) {
                    for (std::size_t i = 0; i < model.action_names().size(); ++i)
                        if (model.action_names()[i] == stop_on) opts.stop_after_action = static_cast<int>(i);
                }
                Trajectory traj = simulate_ctmc(model, model.initial_state(), horizon, rng, opts);
                write_ctmc_trajectory_csv(traj_path, model, traj, std::nullopt);
                std::cout << "events: " << traj.event_count << "\n";
            }
            EnsembleStats stats = run_ctmc_ensemble(p, size, cfg, 0);
            std::string csv = grid_csv(stats);
            if (!out_path.empty()) {
                write_file(out_path + "/grid.csv", csv);
                write_file(out_path + "/cdf.csv", cdf_csv(stats));
                write_file(out_path + "/summary.csv", summary_csv(stats));
            } else {
                std::cout << csv;
            }
            if (stats.failed_replicates > 0) {
                std::cerr << stats.failed_replicates << " replicates failed\n";
                for (const auto& e : stats.errors)
                    std::cerr << "  " << e << "\n";
                return kExitRuntimeError;
            }
            return kExitOk;
        }

        if (pdmp_cmd->parsed() || fluid_cmd->parsed()) {
            Program p = load_model(model_path, params, classes);
            Program norm = size > 0 ? normalize(p, NormalizeMode::AtSize, size)
                                    : normalize(p, NormalizeMode::Limit);
            PdmpModel model = assemble_pdmp(build_tdsha(norm));
            if (fluid_cmd->parsed() && (!model.stochastic().empty() || !model.instantaneous().empty()))
                std::cerr << "note: model has jump transitions; fluid mode integrates only the flows it has\n";
            for (const auto& n : model.notes())
                std::cerr << "note: " << n << "\n";
            ExperimentConfig cfg;
            cfg.reps = fluid_cmd->parsed() ? 1 : reps;
            cfg.seed = seed;
            cfg.horizon = horizon;
            cfg.grid_step = grid_step;
            if (!traj_path.empty() || !diag_path.empty()) {
                SplitRng rng = SplitRng::for_replicate(seed, 0, 0);
                PdmpOptions popts;
                popts.sample_times = cfg.grid();
                PdmpTrajectory traj = simulate_pdmp(model, horizon, rng, popts);
                if (!traj_path.empty()) write_pdmp_trajectory_csv(traj_path, model, traj);
                if (!diag_path.empty()) write_pdmp_diagnostics_jsonl(diag_path, traj);
            }
            EnsembleStats stats = run_pdmp_ensemble(model, cfg, 0);
            std::string csv = grid_csv(stats);
            if (!out_path.empty()) {
                write_file(out_path + "/grid.csv", csv);
                write_file(out_path + "/cdf.csv", cdf_csv(stats));
                write_file(out_path + "/summary.csv", summary_csv(stats));
            } else {
                std::cout << csv;
            }
            if (stats.failed_replicates > 0) {
                std::cerr << stats.failed_replicates << " replicates failed\n";
                for (const auto& e : stats.errors)
                    std::cerr << "  " << e << "\n";
                return kExitRuntimeError;
            }
            return kExitOk;
        }

        if (dump_cmd->parsed()) {
            Program p = load_model(model_path, params, classes);
            Program norm = size > 0 ? normalize(p, NormalizeMode::AtSize, size)
                                    : normalize(p, NormalizeMode::Limit);
            std::cout << dump_tdsha(build_tdsha(norm));
            return kExitOk;
        }

        if (compare_cmd->parsed()) {
            ExperimentConfig cfg = load_config(config_path);
            if (assert_converges) cfg.assert_converges = true;
            SourceModel src = parse_source(slurp(cfg.model_path), cfg.model_path);
            if (!src.ok()) {
                std::cerr << src.diagnostics_text();
                return kExitModelError;
            }
            Program p = apply_overrides(*src.program, cfg);
            {
                ScalingReport scaling = check_scalings(flatten(p), ScalingOptions{}, SplitRng(cfg.seed));
                if (!scaling.all_pass) {
                    for (const auto& e : scaling.entries)
                        if (!e.pass) std::cerr << "scaling: " << e.action << ": " << e.verdict() << "\n";
                    if (!force) {
                        std::cerr << "scaling check failed; rerun with --force to compare anyway\n";
                        return kExitModelError;
                    }
                }
            }
            CompareResult result = run_compare(p, cfg);
            std::string csv = to_csv(result.report);
            if (!cfg.out_dir.empty()) {
                write_file(cfg.out_dir + "/report.csv", csv);
                for (const auto& [sz, stats] : result.ctmc) {
                    write_file(cfg.out_dir + "/ctmc_" + csv_number(sz) + "_grid.csv", grid_csv(stats));
                    write_file(cfg.out_dir + "/ctmc_" + csv_number(sz) + "_cdf.csv", cdf_csv(stats));
                }
                write_file(cfg.out_dir + "/pdmp_grid.csv", grid_csv(result.pdmp));
                write_file(cfg.out_dir + "/pdmp_cdf.csv", cdf_csv(result.pdmp));
            }
            std::cout << csv;
            std::cout << "verdict: " << result.report.verdict() << "\n";
            long long failed = result.pdmp.failed_replicates;
            for (const auto& [sz, stats] : result.ctmc)
                failed += stats.failed_replicates;
            if (failed > 0) {
                std::cerr << failed << " replicates failed\n";
                return kExitRuntimeError;
            }
            if (cfg.assert_converges && !result.report.pass) return kExitVerdictFail;
            return kExitOk;
        }
    } catch (const ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitModelError;
    } catch (const ValidationFailed& e) {
        std::cerr << e.what() << "\n";
        return kExitModelError;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitModelError;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return kExitRuntimeError;
    }
    return kExitOk;
}
