#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "hypops/ctmc.hpp"
#include "hypops/parser.hpp"

using namespace hypops;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Program load(const std::string& path) { return parse_model(slurp(path), path); }

} // namespace

TEST_CASE("enabled stochastic actions carry evaluated rates") {
    Program p = load("models/client_server_hybrid.sccp");
    SimModel model(p, 1000.0);
    CtmcState s = model.initial_state();
    s.values = {0.0, 100.0, 2.0, 0.0}; // Xr Xt Xi Xb

    auto enabled = enabled_stochastic(model, s);
    bool request = false, think = false;
    double think_rate = 0;
    for (const auto& [act, rate] : enabled) {
        if (act->name == "request") request = true;
        if (act->name == "think") {
            think = true;
            think_rate = rate;
        }
    }
    CHECK_FALSE(request); // min(2*0, ...) = 0
    CHECK(think);
    CHECK(think_rate == Catch::Approx(0.02 * 100));
}

TEST_CASE("gene state gates its transitions") {
    Program p = load("models/gene_network.sccp");
    SimModel model(p, 1000.0);
    CtmcState s = model.initial_state(); // Gon=1 Goff=0 M=0 P=0

    auto enabled = enabled_stochastic(model, s);
    bool transcribe = false, unbind = false;
    for (const auto& [act, rate] : enabled) {
        if (act->name == "transcribe") transcribe = true;
        if (act->name == "unbind") unbind = true;
    }
    CHECK(transcribe);
    CHECK_FALSE(unbind); // ku * Goff = 0
}

TEST_CASE("no guard true means no enabled actions") {
    Program p = parse_model("size N;\nvar X : discrete init 0;\n"
                            "agent a { act : [X >= 5] rate 1 class discrete -> { X += 1; }; }\n");
    SimModel model(p, 10.0);
    CHECK(enabled_stochastic(model, model.initial_state()).empty());

    SplitRng rng(3);
    Trajectory traj = simulate_ctmc(model, model.initial_state(), 10.0, rng);
    CHECK(traj.events.empty());
    CHECK(traj.final_state.time == 10.0);
}

TEST_CASE("instantaneous selection is proportional to weight") {
    Program p = parse_model("size N;\n"
                            "var Z : discrete init 0;\nvar X : discrete init 1;\n"
                            "agent a { big : [Z == 0 && X >= 1] immediate weight 99 -> { Z = 1; X = 0; }; }\n"
                            "agent b { small : [Z == 0 && X >= 1] immediate weight 1 -> { Z = -1; X = 0; }; }\n");
    SimModel model(p, 1.0);
    int big = 0;
    const int runs = 20000;
    for (int r = 0; r < runs; ++r) {
        SplitRng rng = SplitRng::for_replicate(5, 0, static_cast<std::uint64_t>(r));
        CtmcState s = model.initial_state();
        resolve_instantaneous(model, s, rng, 1);
        if (s.values[0] == 1.0) ++big;
    }
    double frac = static_cast<double>(big) / runs;
    CHECK(frac == Catch::Approx(0.99).margin(0.005));
}

TEST_CASE("resolve on a quiet state is the identity") {
    Program p = load("models/client_server_hybrid.sccp");
    SimModel model(p, 100.0);
    CtmcState s = model.initial_state();
    CtmcState before = s;
    SplitRng rng(9);
    CHECK(resolve_instantaneous(model, s, rng, 1) == 0);
    CHECK(s.values == before.values);
}

TEST_CASE("instantaneous ping-pong exceeds the chain limit") {
    Program p = parse_model("size N;\nvar X : discrete init 1;\n"
                            "agent a { knock : [X >= 1] immediate weight 1 -> { X = 0; }; }\n"
                            "agent b { back : [X <= 0] immediate weight 1 -> { X = 1; }; }\n");
    SimModel model(p, 1.0);
    CtmcState s = model.initial_state();
    SplitRng rng(4);
    CHECK_THROWS_AS(resolve_instantaneous(model, s, rng, 10), ChainLimitExceeded);
}

TEST_CASE("timed activations are scheduled in closed form") {
    Program p = parse_model("size N;\n"
                            "var Xb : discrete init 1;\nvar K : environment init 7.3;\n"
                            "agent s { fix : [Xb >= 1 && time >= K] immediate weight 1 -> { Xb -= 1; }; }\n");
    SimModel model(p, 1.0);
    CtmcState s = model.initial_state();
    s.time = 5.0;
    auto at = next_timed_activation(model, s);
    REQUIRE(at.has_value());
    CHECK(*at == Catch::Approx(7.3));

    s.values[0] = 0; // conjunct false
    CHECK_FALSE(next_timed_activation(model, s).has_value());

    s.values[0] = 1;
    s.values[1] = 4.0; // already due: clamp to now
    auto now = next_timed_activation(model, s);
    REQUIRE(now.has_value());
    CHECK(*now == Catch::Approx(5.0));
}

TEST_CASE("first waiting time inverts the total rate") {
    Program p = parse_model("size N;\nvar X : discrete init 0;\n"
                            "agent a { tick : rate 2 class discrete -> { X += 1; }; }\n");
    SimModel model(p, 1.0);
    SplitRng rng = SplitRng::for_replicate(77, 0, 0);
    SplitRng probe = SplitRng::for_replicate(77, 0, 0);
    double xi = probe.exp1();
    Trajectory traj = simulate_ctmc(model, model.initial_state(), 100.0, rng);
    REQUIRE_FALSE(traj.events.empty());
    CHECK(traj.events[0].time == Catch::Approx(xi / 2.0));
}

TEST_CASE("timed event fires between stochastic jumps") {
    Program p = load("models/server_timed.sccp");
    SimModel model(p, 1000.0);
    SplitRng rng = SplitRng::for_replicate(123, 0, 0);
    SimOptions opts;
    Trajectory traj = simulate_ctmc(model, model.initial_state(), 20000.0, rng, opts);
    bool saw_breakdown = false, saw_timed = false;
    double last_t = 0;
    int tb_slot = model.program().var_index("Tb");
    int d_slot = model.program().var_index("D");
    std::vector<double> values = traj.initial.values;
    for (const auto& ev : traj.events) {
        CHECK(ev.time >= last_t);
        last_t = ev.time;
        if (model.action_names()[static_cast<std::size_t>(ev.action)] == "breakdown") saw_breakdown = true;
        if (ev.kind == EventKind::Timed) {
            saw_timed = true;
            // the repair fires exactly at breakdown time + sampled delay
            CHECK(ev.time == Catch::Approx(values[static_cast<std::size_t>(tb_slot)] +
                                           values[static_cast<std::size_t>(d_slot)]));
        }
        for (const auto& [slot, value] : ev.delta)
            values[static_cast<std::size_t>(slot)] = value;
    }
    CHECK(saw_breakdown);
    CHECK(saw_timed);
}

TEST_CASE("conservation laws hold eventwise") {
    SECTION("client-server") {
        Program p = load("models/client_server_hybrid.sccp");
        SimModel model(p, 1000.0);
        SplitRng rng = SplitRng::for_replicate(2024, 0, 0);
        SimOptions opts;
        opts.record_events = false;
        long long checked = 0;
        auto observer = [&](const CtmcState& s, int, EventKind) {
            CHECK(s.values[0] + s.values[1] == 1000.0);
            CHECK(s.values[2] + s.values[3] == 2.0);
            ++checked;
        };
        simulate_ctmc(model, model.initial_state(), 50.0, rng, opts, observer);
        CHECK(checked > 100);
    }
    SECTION("epidemic with control") {
        Program p = load("models/sir_control.sccp");
        SimModel model(p, 500.0);
        SplitRng rng = SplitRng::for_replicate(2025, 0, 0);
        SimOptions opts;
        opts.record_events = false;
        auto observer = [&](const CtmcState& s, int, EventKind) {
            CHECK(s.values[0] + s.values[1] + s.values[2] == 500.0);
        };
        simulate_ctmc(model, model.initial_state(), 5.0, rng, opts, observer);
    }
    SECTION("gene: the gene is always in exactly one state") {
        Program p = load("models/gene_network.sccp");
        SimModel model(p, 200.0);
        SplitRng rng = SplitRng::for_replicate(2026, 0, 0);
        SimOptions opts;
        opts.record_events = false;
        long long events = 0;
        auto observer = [&](const CtmcState& s, int, EventKind) {
            REQUIRE(s.values[0] + s.values[1] == 1.0);
            ++events;
        };
        simulate_ctmc(model, model.initial_state(), 200.0, rng, opts, observer);
        CHECK(events > 1000);
    }
}

TEST_CASE("two-state chain matches detailed balance") {
    Program p = load("models/birth_death.sccp");
    SimModel model(p, 1.0);
    SplitRng rng = SplitRng::for_replicate(31, 0, 0);
    SimOptions opts;
    opts.record_events = false;
    opts.max_events = 1000000;

    // batch-mean occupancy of state 1
    const int batches = 100;
    std::vector<double> batch_occ;
    double batch_time = 0, batch_in1 = 0;
    long long events_per_batch = 10000;
    long long in_batch = 0;
    double last_t = 0;
    double last_s = 1;
    auto observer = [&](const CtmcState& s, int, EventKind) {
        double dt = s.time - last_t;
        batch_time += dt;
        if (last_s == 1.0) batch_in1 += dt;
        last_t = s.time;
        last_s = s.values[0];
        if (++in_batch == events_per_batch) {
            batch_occ.push_back(batch_in1 / batch_time);
            batch_time = batch_in1 = 0;
            in_batch = 0;
        }
    };
    simulate_ctmc(model, model.initial_state(), 1e12, rng, opts, observer);
    REQUIRE(static_cast<int>(batch_occ.size()) >= batches);

    double mean = 0;
    for (double b : batch_occ)
        mean += b;
    mean /= static_cast<double>(batch_occ.size());
    double var = 0;
    for (double b : batch_occ)
        var += (b - mean) * (b - mean);
    var /= static_cast<double>(batch_occ.size() - 1);
    double se = std::sqrt(var / static_cast<double>(batch_occ.size()));
    INFO("occupancy " << mean << " +- " << se);
    CHECK(std::fabs(mean - 2.0 / 3.0) <= 3 * se);
}

TEST_CASE("identical seeds give identical trajectories") {
    Program p = load("models/damage_geometric.sccp");
    SimModel model(p, 500.0);
    SimOptions opts;
    opts.dense = true;
    SplitRng r1 = SplitRng::for_replicate(900, 2, 5);
    SplitRng r2 = SplitRng::for_replicate(900, 2, 5);
    Trajectory a = simulate_ctmc(model, model.initial_state(), 3000.0, r1, opts);
    Trajectory b = simulate_ctmc(model, model.initial_state(), 3000.0, r2, opts);
    REQUIRE(a.events.size() == b.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        CHECK(a.events[i].time == b.events[i].time);
        CHECK(a.events[i].action == b.events[i].action);
        CHECK(a.events[i].post_state == b.events[i].post_state);
    }
    CHECK(a.final_state.values == b.final_state.values);
}

TEST_CASE("non-integer assignment to an integer variable is a domain violation") {
    Program p = parse_model("size N;\nvar X : discrete init 0;\n"
                            "agent a { half : rate 1 class discrete -> { X = sample uniform(0, 1); }; }\n");
    SimModel model(p, 1.0);
    SplitRng rng(11);
    CHECK_THROWS_AS(simulate_ctmc(model, model.initial_state(), 10.0, rng), DomainViolation);
}

TEST_CASE("negative rates clamp to zero and are counted") {
    Program p = parse_model("size N;\nvar X : discrete init 0;\n"
                            "agent a { bad : rate 0 - 1 class discrete -> { X += 1; }; "
                            "ok : rate 1 class discrete -> { X += 1; }; }\n");
    SimModel model(p, 1.0);
    SplitRng rng(12);
    Trajectory traj = simulate_ctmc(model, model.initial_state(), 5.0, rng);
    CHECK(traj.negative_rate_clamps > 0);
    CHECK(traj.event_count > 0);
}
