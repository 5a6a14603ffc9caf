/*
   Copyright 2026 The SAFIUS Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/


#include "doctest.h"
#include "safius/bench.hpp"
#include "safius/harness.hpp"
#include "safius/scenario_config.hpp"

using namespace safius;

namespace {

Scenario load(const std::string& f) { return load_scenario(std::string(SAFIUS_SCENARIO_DIR) + "/" + f); }

std::vector<std::string> verdicts(const ScenarioResult& r)
{
    std::vector<std::string> v;
    for (const auto& x : r.verdicts) v.push_back(x.kind + " " + x.verdict);
    return v;
}

}  // namespace

TEST_SUITE("scenarios")
{
    TEST_CASE("honest two-node workload keeps every invariant")
    {
        Scenario sc = load("honest_shared.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        INFO(r.report.text());
        CHECK(r.ok());
        CHECK(r.verdicts.empty());
        CHECK(r.report.get("hotpath_crypto_calls") == 0u);
    }

    TEST_CASE("file semantics across nodes")
    {
        Scenario sc = load("semantics.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        INFO(r.report.text());
        CHECK(r.ok());
    }

    TEST_CASE("a lying server is blamed every time")
    {
        Scenario sc = load("malicious_server.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        INFO(r.report.text());
        CHECK(r.ok());
        REQUIRE(!r.verdicts.empty());
        for (const auto& v : r.verdicts) {
            CHECK(v.verdict == "StorageServer");
            CHECK(v.correct);
        }
        CHECK(r.violations_disputed == r.violations_injected);
    }

    TEST_CASE("a lying client is blamed")
    {
        Scenario sc = load("malicious_client.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        INFO(r.report.text());
        CHECK(r.ok());
        CHECK(verdicts(r) == std::vector<std::string>{"UnsolicitedStore Fileserver(3)"});
    }

    TEST_CASE("a violation in the unsigned window is not pinned on anyone")
    {
        Scenario sc = load("unsigned_window.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        INFO(r.report.text());
        CHECK(r.ok());
        REQUIRE(r.verdicts.size() == 1);
        CHECK(r.verdicts[0].verdict == "NoViolation [InsufficientEvidence]");
        CHECK(r.verdicts[0].in_window);
        CHECK_FALSE(r.verdicts[0].false_accusation);
    }

    TEST_CASE("every crash point recovers all or nothing")
    {
        for (const char* f : {"crash_commit.scn", "crash_after_checkpoint.scn"}) {
            Scenario sc = load(f);
            CrashSuite s = enumerate_crash_points(sc, sc.seed);
            CAPTURE(f);
            CHECK(s.cases.size() >= 20);
            CHECK(s.all_consistent());
            for (const auto& c : s.cases) {
                CAPTURE(c.hit.point);
                CHECK(c.outcome != "neither");
            }
        }
    }

    TEST_CASE("an unexpected result fails the script invariant")
    {
        Scenario sc = parse_scenario("op 1 1 create /a 1\nop 1 1 write /a 0 abc\nop 1 1 commit\n"
                                     "op 2 2 read /a 0 3 =abd\n");
        ScenarioResult r = run_scenario(sc, 1);
        CHECK_FALSE(r.ok());
    }

    TEST_CASE("extra fault plans merge into a scenario")
    {
        Scenario sc = load("honest_shared.scn");
        FaultPlan p = parse_fault_plan("fault @3 refuse-grant 1\n");
        ScenarioResult r = run_scenario(sc, sc.seed, p);
        INFO(r.report.text());
        CHECK(r.ok());
        for (const auto& v : r.verdicts) CHECK_FALSE(v.false_accusation);
    }

    TEST_CASE("property: random faults of every kind are judged soundly")
    {
        for (std::uint64_t seed = 100; seed < 116; ++seed)
            for (FaultKind k : {FaultKind::DropBlock, FaultKind::ReturnNotFound, FaultKind::CorruptBytes,
                                FaultKind::RefuseGrant, FaultKind::ForgeClaim, FaultKind::ForgeCharge,
                                FaultKind::CrashActor, FaultKind::DelayMessage}) {
                Scenario sc = random_fault_scenario(seed, k);
                ScenarioResult r = run_scenario(sc, seed);
                CAPTURE(sc.name);
                INFO(r.report.text());
                REQUIRE(r.ok());
                for (const auto& v : r.verdicts) REQUIRE_FALSE(v.false_accusation);
            }
    }

    TEST_CASE("same seed, same bytes")
    {
        Scenario sc = random_fault_scenario(3, FaultKind::DelayMessage);
        ScenarioResult a = run_scenario(sc, 3), b = run_scenario(sc, 3);
        CHECK(a.trace.serialize() == b.trace.serialize());
        CHECK(a.report.json() == b.report.json());
        ScenarioResult c = run_scenario(sc, 4);
        CHECK(c.trace.serialize() != a.trace.serialize());
    }
}

TEST_SUITE("bench")
{
    TEST_CASE("store bench config parses")
    {
        BenchConfig c = parse_bench_config("workload postmark\nmode sync-sign\nthreshold 10\nfiles 20\n");
        CHECK(c.workload == "postmark");
        CHECK(c.mode == SignMode::Sync);
        CHECK(c.threshold == 10);
        CHECK(c.files == 20);
        CHECK_THROWS_AS(parse_bench_config("files many\n"), Error);
    }

    TEST_CASE("small postmark run commits and stays crypto-free on the hot path")
    {
        BenchConfig c;
        c.workload = "postmark";
        c.files = 30;
        c.transactions = 60;
        c.threshold = 50;
        PostmarkResult p = run_postmark(c);
        CHECK(p.commits > 0);
        CHECK(p.creates >= 30);
        CHECK(p.vm.hotpath_crypto_calls == 0);
        CHECK(p.vm.sign_calls > 0);
        CHECK(bench_report(c).ok());
    }

    TEST_CASE("churn is bounded by live blocks after pruning")
    {
        Report r = prune_report({500}, 20, 3);
        INFO(r.text());
        CHECK(r.ok());
        CHECK(r.get("ops500.vault_size_post_prune").value_or(999) <= 21);
    }
}
