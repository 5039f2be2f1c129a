#include "crossdiff/scenario.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace crossdiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string write_temp_scenario(const json& j, const std::string& name) {
    const fs::path dir = fs::path("test_tmp");
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << j.dump(2);
    return p.string();
}

}  // namespace

TEST_CASE("all presets parse and validate") {
    for (const auto& name : preset_names()) {
        const Scenario sc = parse_scenario(name);
        CHECK(sc.system.n >= 1);
        const Grid g = sc.grid.build();
        const Field u0 = build_initial(sc, g);
        CHECK(u0.values.minCoeff() >= 0.0);
        const auto rep = classify_hypotheses(sc.system, sc.audit.seed, 500);
        CHECK(rep.classification != HypothesisClass::None);
    }
}

TEST_CASE("preset derivations") {
    const Scenario skt3 = parse_scenario("skt3-db");
    CHECK(skt3.entropy_derived);
    REQUIRE(skt3.system.n == 3);
    CHECK(skt3.system.entropy.pi[0] == doctest::Approx(1.0));
    CHECK(skt3.system.entropy.pi[1] == doctest::Approx(2.0));
    CHECK(skt3.system.entropy.pi[2] == doctest::Approx(3.0));

    const Scenario ma2 = parse_scenario("ma2");
    CHECK(ma2.system.entropy.lambda[0] == doctest::Approx(0.5 * std::log(2.0)));
    CHECK(ma2.system.entropy.lambda[1] == doctest::Approx(-0.5 * std::log(2.0)));
    const auto rep = classify_hypotheses(ma2.system, 42, 2000);
    CHECK(rep.classification == HypothesisClass::H5Prime);
    CHECK(rep.h4.margin <= 1e-10 * rep.h4.scale);
}

TEST_CASE("schema violations carry pointer paths") {
    json j = json::parse(preset_text("heat1"));
    j["scheme"].erase("tau");
    try {
        parse_scenario_text(j.dump(), "test");
        FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
        CHECK(std::string(e.what()).find("/scheme") != std::string::npos);
        CHECK(std::string(e.what()).find("tau") != std::string::npos);
    }

    json j2 = json::parse(preset_text("heat1"));
    j2["scheme"]["unknown_knob"] = 3;
    try {
        parse_scenario_text(j2.dump(), "test");
        FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
        CHECK(std::string(e.what()).find("unknown_knob") != std::string::npos);
    }
}

TEST_CASE("derive with cycle-violating coefficients names the cycle") {
    json j = json::parse(preset_text("skt3-db"));
    j["system"]["a"] = {{0.0, 1.0, 2.0}, {1.0, 0.0, 1.0}, {1.0, 1.0, 0.0}};
    try {
        parse_scenario_text(j.dump(), "test");
        FAIL("expected a scenario error");
    } catch (const ScenarioError& e) {
        const std::string msg = e.what();
        const bool names_cycle = msg.find("cycle") != std::string::npos ||
                                 msg.find("positive") != std::string::npos;
        CHECK(names_cycle);
    }
}

TEST_CASE("negative initial data is a configuration error") {
    json j = json::parse(preset_text("heat1"));
    j["initial"][0]["offset"] = -5.0;
    const Scenario sc = parse_scenario_text(j.dump(), "test");
    const Grid g = sc.grid.build();
    CHECK_THROWS_AS(build_initial(sc, g), ScenarioError);
}

TEST_CASE("run with t_end = 0 emits the initial snapshot only") {
    json j = json::parse(preset_text("heat1"));
    j["scheme"]["t_end"] = 0.0;
    j["output"] = "test_tmp/t0";
    const std::string path = write_temp_scenario(j, "t0.json");
    fs::remove_all("test_tmp/t0");
    CHECK(dispatch("run", path, {}) == 0);
    CHECK(fs::exists("test_tmp/t0/manifest.json"));
    CHECK(fs::exists("test_tmp/t0/snapshot_000000.csv"));
    CHECK(fs::exists("test_tmp/t0/audit.csv"));
    int snapshots = 0;
    for (const auto& ent : fs::directory_iterator("test_tmp/t0")) {
        if (ent.path().filename().string().rfind("snapshot_", 0) == 0) ++snapshots;
    }
    CHECK(snapshots == 1);
}

TEST_CASE("snapshot stride counting") {
    json j = json::parse(preset_text("heat1"));
    j["scheme"]["t_end"] = 0.1;   // 100 steps at tau = 1e-3
    j["scheme"]["snapshot_stride"] = 10;
    j["grid"]["nodes"] = {33};
    j["output"] = "test_tmp/stride";
    const std::string path = write_temp_scenario(j, "stride.json");
    fs::remove_all("test_tmp/stride");
    CHECK(dispatch("run", path, {}) == 0);
    int snapshots = 0;
    for (const auto& ent : fs::directory_iterator("test_tmp/stride")) {
        if (ent.path().filename().string().rfind("snapshot_", 0) == 0) ++snapshots;
    }
    CHECK(snapshots == 11);
}

TEST_CASE("reruns produce identical numeric artifacts") {
    json j = json::parse(preset_text("heat1"));
    j["scheme"]["t_end"] = 0.02;
    j["grid"]["nodes"] = {33};
    const std::string path = write_temp_scenario(j, "det.json");

    DispatchOptions a;
    a.out_override = "test_tmp/det_a";
    DispatchOptions b;
    b.out_override = "test_tmp/det_b";
    fs::remove_all("test_tmp/det_a");
    fs::remove_all("test_tmp/det_b");
    CHECK(dispatch("run", path, a) == 0);
    CHECK(dispatch("run", path, b) == 0);
    for (const auto& name : {"audit.csv", "snapshot_000000.csv"}) {
        CHECK(slurp(fs::path("test_tmp/det_a") / name) ==
              slurp(fs::path("test_tmp/det_b") / name));
    }
}

TEST_CASE("unreachable newton tolerance exits with code 2 and partial artifacts") {
    json j = json::parse(preset_text("skt2"));
    j["scheme"]["t_end"] = 0.01;
    j["grid"]["nodes"] = {32};
    j["scheme"]["newton"] = {{"tolerance", 1e-30}, {"max_iterations", 3}};
    j["output"] = "test_tmp/fail";
    const std::string path = write_temp_scenario(j, "fail.json");
    fs::remove_all("test_tmp/fail");
    CHECK(dispatch("run", path, {}) == 2);
    CHECK(fs::exists("test_tmp/fail/manifest.json"));
    CHECK(fs::exists("test_tmp/fail/audit.csv"));
}

TEST_CASE("check emits a classification consistent with the coefficients") {
    json j = json::parse(preset_text("skt2"));
    j["output"] = "test_tmp/check";
    const std::string path = write_temp_scenario(j, "check.json");
    fs::remove_all("test_tmp/check");
    CHECK(dispatch("check", path, {}) == 0);
    const json rep = json::parse(slurp("test_tmp/check/hypotheses.json"));
    CHECK(rep.at("classification").get<std::string>() == "H5-prime");
    CHECK(rep.at("alpha").get<double>() == doctest::Approx(0.75));
    const json manifest = json::parse(slurp("test_tmp/check/manifest.json"));
    CHECK(manifest.at("classification").get<std::string>() == "H5-prime");
    // Manifest lists every artifact it commits.
    for (const auto& f : manifest.at("artifacts")) {
        CHECK(fs::exists(fs::path("test_tmp/check") / f.get<std::string>()));
    }
}

TEST_CASE("manifest scenario hash is stable for identical inputs") {
    const Scenario a = parse_scenario("heat1");
    const Scenario b = parse_scenario("heat1");
    CHECK(fnv1a_hash(a.normalized.dump()) == fnv1a_hash(b.normalized.dump()));
}
