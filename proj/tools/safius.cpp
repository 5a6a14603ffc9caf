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


// safius: run scenarios, the crash-point suite, benchmarks and reports.
// Exit status: 0 success, 1 an invariant failed, 2 usage or config error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "safius/bench.hpp"
#include "safius/scenario_config.hpp"

using namespace safius;

namespace {

int emit(const Report& r, bool json)
{
    std::cout << (json ? r.json() + "\n" : r.text());
    return r.ok() ? 0 : 1;
}

void write_trace(const std::string& path, const Trace& t)
{
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) raise(Errc::Config, "cannot write " + path);
    out << t.serialize();
}

Report crash_report(const std::string& file, const CrashSuite& s)
{
    Report r;
    r.title = "crash-suite " + file;
    std::size_t pre = 0, post = 0, neither = 0;
    for (const auto& c : s.cases) {
        pre += c.outcome == "pre";
        post += c.outcome == "post";
        neither += c.outcome == "neither";
        r.note("case", c.hit.actor + ":" + c.hit.point + "#" + std::to_string(c.hit.occurrence) + " -> " + c.outcome +
                           " " + c.detail);
    }
    r.counter("cases", s.cases.size());
    r.counter("distinct_points", s.distinct_points);
    r.counter("pre", pre);
    r.counter("post", post);
    r.counter("neither", neither);
    r.check("all-or-nothing", s.all_consistent(), std::to_string(neither) + " inconsistent");
    return r;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"SAFIUS simulator and reports"};
    app.require_subcommand(1);
    bool json = false;
    app.add_flag("--json", json, "machine-readable output");

    std::string file, faults, trace_out, bench_cfg, mode;
    std::uint64_t seed = 0;
    std::size_t count = 500, stores = 0, threshold = 0;

    auto* sc = app.add_subcommand("scenario", "run a scenario file");
    sc->add_option("file", file, "scenario file")->required();
    sc->add_option("--seed", seed, "override the scenario seed");
    sc->add_option("--faults", faults, "extra fault plan");
    sc->add_option("--trace", trace_out, "write the trace here");
    sc->add_flag("--json", json);

    auto* bench = app.add_subcommand("bench", "stores microbenchmark or postmark workload");
    bench->add_option("--mode", mode, "no-sign, sync-sign or async-sign");
    bench->add_option("--config", bench_cfg, "bench config file");
    bench->add_option("--stores", stores, "number of stores");
    bench->add_option("--threshold", threshold, "batch threshold");
    bench->add_flag("--json", json);

    auto* prune = app.add_subcommand("prune-report", "evidence size before and after pruning");
    prune->add_option("file", file, "scenario file with churn")->required();
    prune->add_option("--seed", seed, "override the scenario seed");
    prune->add_flag("--json", json);

    auto* crash = app.add_subcommand("crash-suite", "crash at every named point of the commit of interest");
    crash->add_option("file", file, "scenario file with 'do interest'")->required();
    crash->add_option("--seed", seed, "override the scenario seed");
    crash->add_flag("--json", json);

    auto* acc = app.add_subcommand("accountability", "randomized fault-injection audit suite");
    acc->add_option("--count", count, "number of scenarios");
    acc->add_option("--seed", seed, "base seed");
    acc->add_flag("--json", json);
    long only = -1;
    acc->add_option("--only", only, "run just this scenario index and print its report");
    acc->add_option("--trace", trace_out, "with --only: write the trace here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sc) {
            Scenario s = load_scenario(file);
            FaultPlan extra = faults.empty() ? FaultPlan{} : load_fault_plan(faults);
            ScenarioResult res = run_scenario(s, seed ? seed : s.seed, extra);
            write_trace(trace_out, res.trace);
            return emit(res.report, json);
        }
        if (*bench) {
            BenchConfig c = bench_cfg.empty() ? BenchConfig{} : load_bench_config(bench_cfg);
            if (!mode.empty()) c.mode = parse_sign_mode(mode);
            if (stores) c.stores = stores;
            if (threshold) c.threshold = threshold;
            return emit(bench_report(c), json);
        }
        if (*prune) {
            Scenario s = load_scenario(file);
            ScenarioResult res = run_scenario(s, seed ? seed : s.seed);
            Report r = res.report;
            r.title = "prune-report " + s.name;
            return emit(r, json);
        }
        if (*crash) {
            Scenario s = load_scenario(file);
            return emit(crash_report(file, enumerate_crash_points(s, seed ? seed : s.seed)), json);
        }
        if (*acc) {
            if (only >= 0) {
                const int kinds = static_cast<int>(FaultKind::DelayMessage) + 1;
                auto kind = static_cast<FaultKind>(only % kinds);
                std::uint64_t sseed = (seed ? seed : 1) * 7919 + static_cast<std::uint64_t>(only);
                ScenarioResult res = run_scenario(random_fault_scenario(sseed, kind), sseed);
                write_trace(trace_out, res.trace);
                return emit(res.report, json);
            }
            return emit(run_accountability(count, seed ? seed : 1).report(), json);
        }
    } catch (const Error& e) {
        std::cerr << "safius: " << e.what() << "\n";
        return e.code() == Errc::Config || e.code() == Errc::InvalidArgument ? 2 : 1;
    }
    return 2;
}
