#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hypops/ensemble.hpp"
#include "hypops/stats.hpp"

using namespace hypops;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("two-sample KS distances") {
    CHECK(ks_two_sample({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(ks_two_sample({1, 2, 3}, {4, 5, 6}) == 1.0);
    CHECK_THROWS_AS(ks_two_sample({}, {1.0}), EmptySample);

    // fate-variable gap: 50/50 against 99/1
    std::vector<double> ctmc, pdmp;
    for (int i = 0; i < 500; ++i) {
        ctmc.push_back(-1);
        ctmc.push_back(1);
    }
    for (int i = 0; i < 990; ++i)
        pdmp.push_back(1);
    for (int i = 0; i < 10; ++i)
        pdmp.push_back(-1);
    CHECK(ks_two_sample(ctmc, pdmp) == Catch::Approx(0.49));
}

TEST_CASE("same-distribution KS stays under the acceptance level") {
    SplitRng rng(20260810);
    const int n = 10000;
    const double level = 1.63 * std::sqrt(2.0 / n);
    int ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(n), b(n);
        for (auto& x : a)
            x = rng.uniform01();
        for (auto& x : b)
            x = rng.uniform01();
        if (ks_two_sample(a, b) < level) ++ok;
    }
    CHECK(ok >= 99);
}

TEST_CASE("convergence report verdicts") {
    auto mk = [](std::vector<double> samples, long long reps) {
        EnsembleStats s;
        s.replicates = reps;
        s.probe_samples[{1.0, "X"}] = std::move(samples);
        s.finalize();
        return s;
    };

    SECTION("identical inputs pass") {
        SplitRng rng(3);
        std::vector<double> base;
        for (int i = 0; i < 1000; ++i)
            base.push_back(rng.uniform01());
        EnsembleStats a = mk(base, 1000), b = mk(base, 1000), ref = mk(base, 1000);
        ConvergenceReport r = convergence_report({{100, &a}, {1000, &b}}, ref, {{1.0, "X"}});
        CHECK(r.pass);
        CHECK(r.verdict() == "pass");
    }

    SECTION("a flat large gap fails") {
        std::vector<double> deg(1000, -1.0);
        std::vector<double> half;
        for (int i = 0; i < 500; ++i) {
            half.push_back(-1.0);
            half.push_back(1.0);
        }
        EnsembleStats a = mk(deg, 1000), b = mk(deg, 1000), ref = mk(half, 1000);
        ConvergenceReport r = convergence_report({{100, &a}, {1000, &b}}, ref, {{1.0, "X"}});
        CHECK_FALSE(r.pass);
        CHECK(r.verdict() == "fail");
    }

    SECTION("csv columns carry no NaN") {
        SplitRng rng(4);
        std::vector<double> base;
        for (int i = 0; i < 100; ++i)
            base.push_back(rng.uniform01());
        EnsembleStats a = mk(base, 100), ref = mk(base, 100);
        std::string csv = to_csv(convergence_report({{100, &a}}, ref, {{1.0, "X"}}));
        CHECK(csv.find("nan") == std::string::npos);
        CHECK(csv.find("probe_time,variable,size,ks,mean_diff,monotone,converged,verdict") == 0);
    }
}

TEST_CASE("config files parse") {
    ExperimentConfig cfg = parse_config("model = models/x.sccp\n"
                                        "mode = compare\n"
                                        "sizes = 100, 1000\n"
                                        "horizon = 500 # trailing comment\n"
                                        "grid = 5\n"
                                        "probes = 500:Xr; 250:Xt\n"
                                        "reps = 42\n"
                                        "seed = 7\n"
                                        "param.kb = 0.01\n"
                                        "class.request = continuous\n");
    CHECK(cfg.model_path == "models/x.sccp");
    CHECK(cfg.sizes == std::vector<double>{100, 1000});
    CHECK(cfg.horizon == 500);
    CHECK(cfg.probes.size() == 2);
    CHECK(cfg.reps == 42);
    CHECK(cfg.param_overrides.at("kb") == 0.01);
    CHECK(cfg.class_overrides.at("request") == "continuous");
    CHECK_THROWS_AS(parse_config("nonsense\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("unknown_key = 3\n"), ConfigError);
}

TEST_CASE("single-replicate ensembles have zero variance") {
    Program p = parse_model(slurp("models/client_server_hybrid.sccp"));
    ExperimentConfig cfg;
    cfg.reps = 1;
    cfg.horizon = 10;
    cfg.grid_step = 1;
    cfg.probes = {{10.0, "Xr"}};
    cfg.seed = 5;
    EnsembleStats stats = run_ctmc_ensemble(p, 100.0, cfg, 0);
    CHECK(stats.replicates == 1);
    for (const auto& row : stats.variance)
        for (double v : row)
            CHECK(v == 0.0);
    CHECK(stats.samples(10.0, "Xr").size() == 1);
}

TEST_CASE("ensembles are deterministic and independent of worker count") {
    Program p = parse_model(slurp("models/client_server_hybrid.sccp"));
    ExperimentConfig cfg;
    cfg.reps = 64;
    cfg.horizon = 20;
    cfg.grid_step = 2;
    cfg.probes = {{20.0, "Xr"}};
    cfg.seed = 99;

    setenv("HYPOPS_THREADS", "1", 1);
    EnsembleStats one = run_ctmc_ensemble(p, 200.0, cfg, 0);
    setenv("HYPOPS_THREADS", "2", 1);
    EnsembleStats two = run_ctmc_ensemble(p, 200.0, cfg, 0);
    unsetenv("HYPOPS_THREADS");

    CHECK(grid_csv(one) == grid_csv(two));
    CHECK(cdf_csv(one) == cdf_csv(two));

    EnsembleStats again = run_ctmc_ensemble(p, 200.0, cfg, 0);
    CHECK(grid_csv(again) == grid_csv(one));
}

TEST_CASE("fluid mode is a single deterministic solve with step CDFs") {
    Program p = parse_model(slurp("models/client_server.sccp"));
    PdmpModel model = build_limit_pdmp(p);
    ExperimentConfig cfg;
    cfg.reps = 1;
    cfg.horizon = 50;
    cfg.grid_step = 5;
    cfg.probes = {{50.0, "Xr"}};
    cfg.seed = 3;
    EnsembleStats stats = run_pdmp_ensemble(model, cfg, 0);
    CHECK(stats.replicates == 1);
    const auto& samples = stats.samples(50.0, "Xr");
    CHECK(samples.size() == 1);
    for (const auto& row : stats.variance)
        for (double v : row)
            CHECK(v == 0.0);
}

TEST_CASE("probe errors are reported, not swallowed") {
    Program p = parse_model(slurp("models/client_server_hybrid.sccp"));
    ExperimentConfig cfg;
    cfg.reps = 2;
    cfg.horizon = 5;
    cfg.probes = {{5.0, "NoSuchVar"}};
    cfg.seed = 1;
    EnsembleStats stats = run_ctmc_ensemble(p, 100.0, cfg, 0);
    CHECK(stats.failed_replicates == 2);
    REQUIRE_FALSE(stats.errors.empty());
}
