#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hypops/parser.hpp"
#include "hypops/rng.hpp"

using namespace hypops;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::vector<std::string> kBundledModels = {
    "models/client_server.sccp",   "models/client_server_hybrid.sccp", "models/gene_network.sccp",
    "models/tangential.sccp",      "models/corner_walk.sccp",          "models/rw_sizedep.sccp",
    "models/sir_control.sccp",     "models/server_timed.sccp",         "models/sir_sliding.sccp",
    "models/sir_stoch_guard.sccp", "models/rw_fate.sccp",              "models/damage_geometric.sccp",
    "models/birth_death.sccp",
};

} // namespace

TEST_CASE("client-server source parses to the expected shape") {
    Program p = parse_model(slurp("models/client_server.sccp"));
    CHECK(p.components.size() == 2);
    std::size_t actions = 0;
    for (const auto& c : p.components)
        actions += c.actions.size();
    CHECK(actions == 4);
    CHECK(p.variables.size() == 4);
    CHECK(p.params.at("kr") == 2.0);
    CHECK(p.params.at("kt") == Catch::Approx(0.02));
}

TEST_CASE("discrete variable with non-integer init is rejected") {
    SourceModel src = parse_source("size N;\nvar X : discrete init 1.5;\nagent a { x : rate 1 -> { X += 1; }; }\n");
    REQUIRE(src.program.has_value());
    CHECK(has_errors(src.validation));
    bool found = false;
    for (const auto& d : src.validation)
        if (d.rule == "domain-kind") found = true;
    CHECK(found);
}

TEST_CASE("empty input yields a diagnostic, not a program") {
    SourceModel src = parse_source("");
    CHECK_FALSE(src.program.has_value());
    REQUIRE_FALSE(src.diagnostics.empty());
    CHECK(src.diagnostics[0].message == "empty model");
}

TEST_CASE("stochastic rate referencing time is rejected") {
    SourceModel src =
        parse_source("size N;\nvar X : discrete init 0;\nagent a { x : rate time -> { X += 1; }; }\n");
    REQUIRE(src.program.has_value());
    bool found = false;
    for (const auto& d : src.validation)
        if (d.rule == "time-usage" && d.severity == Diagnostic::Severity::Error) found = true;
    CHECK(found);
}

TEST_CASE("round trip on the bundled corpus") {
    for (const auto& path : kBundledModels) {
        INFO(path);
        Program p = parse_model(slurp(path), path);
        std::string printed = pretty_print(p);
        Program again = parse_model(printed, path + " <printed>");
        CHECK(structurally_equal(p, again));
        // printing is canonical: a second print is byte-identical
        CHECK(pretty_print(again) == printed);
    }
}

TEST_CASE("categorical arguments keep declaration order") {
    std::string text = "size N;\nvar X : discrete init 0;\n"
                       "agent a { x : rate 1 -> { X = sample categorical((3, 1), (1, 2), (2, 7)); }; }\n";
    Program p = parse_model(text);
    std::string printed = pretty_print(p);
    CHECK(printed.find("categorical((3, 1), (1, 2), (2, 7))") != std::string::npos);
    Program again = parse_model(printed);
    CHECK(structurally_equal(p, again));
}

TEST_CASE("minimal model has a stable canonical form") {
    Program p = parse_model("size N;\nvar X : discrete init 0;\nagent a { x : rate 1 -> { X += 1; }; }\n");
    std::string printed = pretty_print(p);
    CHECK(pretty_print(parse_model(printed)) == printed);
}

TEST_CASE("parser survives arbitrary byte input") {
    SplitRng rng(123987);
    for (int it = 0; it < 100000; ++it) {
        std::string junk;
        int len = static_cast<int>(rng.below(48));
        for (int i = 0; i < len; ++i)
            junk += static_cast<char>(rng.below(256));
        SourceModel src = parse_source(junk);
        if (!src.program)
            CHECK_FALSE(src.diagnostics.empty());
    }
    SUCCEED("no crash on fuzz corpus");
}

TEST_CASE("mutated model sources never crash the parser") {
    std::string base = slurp("models/sir_sliding.sccp");
    SplitRng rng(5150);
    for (int it = 0; it < 2000; ++it) {
        std::string text = base;
        int edits = 1 + static_cast<int>(rng.below(4));
        for (int e = 0; e < edits; ++e) {
            std::size_t pos = static_cast<std::size_t>(rng.below(text.size()));
            text[pos] = static_cast<char>(rng.below(256));
        }
        (void)parse_source(text);
    }
    SUCCEED("no crash on mutated corpus");
}
