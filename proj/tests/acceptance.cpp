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


// One line per acceptance criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "safius/bench.hpp"
#include "safius/harness.hpp"
#include "safius/scenario_config.hpp"

using namespace safius;

namespace {

const std::string kScenarios = SAFIUS_SCENARIO_DIR;

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void line(int n, const std::string& name, const std::function<std::pair<bool, std::string>()>& body)
{
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    std::string detail;
    try {
        std::tie(ok, detail) = body();
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::printf("C%d %-28s %s  %s (%.1fs)\n", n, name.c_str(), ok ? "PASS" : "FAIL", detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
}

std::string num(std::uint64_t v) { return std::to_string(v); }

}  // namespace

int main()
{
    StoreBench async_run;
    line(1, "async-amortization", [&] {
        BenchConfig c;  // 20000 stores, threshold 1000
        auto t0 = std::chrono::steady_clock::now();
        async_run = run_store_bench(c);
        double async_s = seconds_since(t0);
        c.mode = SignMode::Sync;
        StoreBench sync_run = run_store_bench(c);
        double total = seconds_since(t0);
        bool ok = async_run.vm.sign_calls <= 21 && async_run.vm.hotpath_crypto_calls == 0 &&
                  sync_run.vm.sign_calls == 20000 && total < 30.0;
        (void)async_s;
        return std::pair{ok, "async sign_calls=" + num(async_run.vm.sign_calls) + " (<=21) hotpath=" +
                                 num(async_run.vm.hotpath_crypto_calls) + " sync sign_calls=" +
                                 num(sync_run.vm.sign_calls) + " (=20000)"};
    });

    line(2, "one-spike-per-batch", [&] {
        bool ok = async_run.completed_batches > 0 && async_run.spike_ops.size() == async_run.completed_batches &&
                  async_run.periodic && async_run.bimodal;
        return std::pair{ok, "spikes=" + num(async_run.spike_ops.size()) + " batches=" +
                                 num(async_run.completed_batches) + " low<=" + num(async_run.low_max) +
                                 " high>=" + num(async_run.high_min) + (async_run.bimodal ? " bimodal" : " unimodal")};
    });

    line(3, "prune-bound", [] {
        Report r = prune_report({1000, 10000}, 100, 11);
        std::string d;
        for (const char* tag : {"ops1000", "ops10000"})
            if (auto v = r.get(std::string(tag) + ".vault_size_post_prune"))
                d += std::string(tag) + " post=" + num(*v) + " ";
        return std::pair{r.ok(), d + "(<=101)"};
    });

    line(4, "accountability", [] {
        auto t0 = std::chrono::steady_clock::now();
        AccountabilitySummary s = run_accountability(520, 1);
        double secs = seconds_since(t0);
        bool ok = s.scenarios >= 500 && s.false_accusations == 0 && s.covered > 0 &&
                  s.covered_correct == s.covered && s.in_window_flagged == s.in_window && s.other_wrong == 0 &&
                  secs < 300.0;
        return std::pair{ok, num(s.scenarios) + " scenarios, covered " + num(s.covered_correct) + "/" +
                                 num(s.covered) + ", window " + num(s.in_window_flagged) + "/" + num(s.in_window) +
                                 ", false accusations " + num(s.false_accusations)};
    });

    line(5, "crash-consistency", [] {
        std::size_t cases = 0, points = 0, bad = 0;
        for (const char* f : {"crash_commit.scn", "crash_after_checkpoint.scn"}) {
            Scenario sc = load_scenario(kScenarios + "/" + f);
            CrashSuite s = enumerate_crash_points(sc, sc.seed);
            cases += s.cases.size();
            points = std::max(points, s.distinct_points);
            for (const auto& c : s.cases) bad += c.outcome == "neither";
        }
        return std::pair{points >= 20 && bad == 0, num(cases) + " cases, " + num(points) +
                                                         " distinct points in one suite (>=20), " + num(bad) +
                                                         " inconsistent"};
    });

    line(6, "refcount-oracle", [] {
        RefcountOracle o = run_refcount_oracle(10000, 5);
        bool ok = o.ops == 10000 && o.frees > 0 && o.per_inode_mismatches == 0 && o.per_uid_mismatches == 0 &&
                  o.tree_mismatches == 0 && o.roots_equal;
        return std::pair{ok, num(o.stores) + " stores " + num(o.frees) + " frees over " + num(o.blocks_compared) +
                                 " blocks, mismatches inode/uid/tree=" + num(o.per_inode_mismatches) + "/" +
                                 num(o.per_uid_mismatches) + "/" + num(o.tree_mismatches) +
                                 (o.roots_equal ? ", roots equal" : ", roots differ")};
    });

    line(7, "bit-flip-integrity", [] {
        IntegrityCheck c = run_integrity(1000, 9);
        bool ok = c.trials == 1000 && c.detected == c.trials && c.decrypted_when_corrupt == 0;
        return std::pair{ok, num(c.detected) + "/" + num(c.trials) + " IntegrityFailure, " +
                                 num(c.decrypted_when_corrupt) + " decrypted"};
    });

    line(8, "two-node-semantics", [] {
        Scenario sc = load_scenario(kScenarios + "/semantics.scn");
        ScenarioResult r = run_scenario(sc, sc.seed);
        return std::pair{r.ok(), num(sc.ops.size()) + " scripted ops" +
                                     std::string(r.ok() ? "" : "\n" + r.report.text())};
    });

    line(9, "determinism", [] {
        std::size_t runs = 0, differ = 0;
        for (const char* f : {"honest_shared.scn", "semantics.scn", "malicious_server.scn", "malicious_client.scn",
                              "unsigned_window.scn", "churn.scn"}) {
            Scenario sc = load_scenario(kScenarios + "/" + f);
            ScenarioResult a = run_scenario(sc, sc.seed), b = run_scenario(sc, sc.seed);
            ++runs;
            differ += a.trace.serialize() != b.trace.serialize() || a.report.text() != b.report.text() ||
                      a.report.json() != b.report.json();
        }
        Scenario sc = random_fault_scenario(77, FaultKind::CrashActor);
        differ += run_scenario(sc, 77).trace.serialize() != run_scenario(sc, 77).trace.serialize();
        ++runs;
        BenchConfig c;
        c.stores = 3000;
        c.threshold = 100;
        differ += bench_report(c).text() != bench_report(c).text();
        ++runs;
        return std::pair{differ == 0, num(runs) + " paired runs, " + num(differ) + " differ"};
    });

    return failures;
}
