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


#pragma once

#include <string>
#include <vector>

#include "safius/harness.hpp"

namespace safius {

// Postmark-style parameters plus the stores microbenchmark knobs.
struct BenchConfig {
    std::string workload = "stores";  // "stores" or "postmark"
    SignMode mode = SignMode::Async;
    std::size_t threshold = 1000;
    std::uint64_t seed = 42;
    // stores
    std::size_t stores = 20000;
    // postmark
    std::size_t files = 500;
    std::size_t size_min = 512;
    std::size_t size_max = 10000;
    std::size_t transactions = 1000;
    std::size_t read_size = 4096;
    std::size_t write_size = 4096;
    std::size_t subdirs = 10;
};

BenchConfig parse_bench_config(const std::string& text);
BenchConfig load_bench_config(const std::string& path);

struct StoreBench {
    VmCounters vm;
    Histogram histogram;
    std::vector<std::uint64_t> latencies;
    std::vector<std::size_t> spike_ops;  // indices of ops at or above the signing cost
    std::size_t completed_batches = 0;
    std::uint64_t low_max = 0, high_min = 0;
    bool bimodal = false;
    bool periodic = false;  // spikes exactly `threshold` ops apart
    std::uint64_t final_flush_signs = 0;
};

StoreBench run_store_bench(const BenchConfig& cfg);

struct PostmarkResult {
    VmCounters vm;
    Histogram histogram;
    std::size_t commits = 0, creates = 0, deletes = 0, reads = 0, appends = 0;
};

PostmarkResult run_postmark(const BenchConfig& cfg);

Report bench_report(const BenchConfig& cfg);

struct ChurnResult {
    std::size_t ops = 0;
    std::size_t leaves = 0;     // live blocks in the agreed tree
    std::size_t evidence_pre = 0, evidence_post = 0;
    std::size_t evidence_peak = 0;
    bool agreed = false;
};

// Random stores and frees over a pool of `blocks` distinct block contents,
// charged to a scratch inode outside the filesystem, then a prune round.
// Repeated store/free of one block is allowed: that is the amplification case.
ChurnResult churn(Deployment& d, FsId node, PrincipalId uid, std::size_t blocks, std::size_t ops, std::uint64_t seed);

Report prune_report(const std::vector<std::size_t>& op_counts, std::size_t blocks, std::uint64_t seed);

struct RefcountOracle {
    std::size_t ops = 0, stores = 0, frees = 0;
    std::size_t blocks_compared = 0;
    std::size_t per_inode_mismatches = 0;
    std::size_t per_uid_mismatches = 0;
    std::size_t tree_mismatches = 0;  // server tree against owner-charged replay
    bool roots_equal = false;
};

// Random stores and frees by three users into inodes of two shared groups,
// checked against a naive replay.
RefcountOracle run_refcount_oracle(std::size_t ops, std::uint64_t seed);

struct IntegrityCheck {
    std::size_t trials = 0, detected = 0, decrypted_when_corrupt = 0, other_errors = 0;
};

// Flip one random bit of a served block per trial.
IntegrityCheck run_integrity(std::size_t trials, std::uint64_t seed);

struct AccountabilitySummary {
    std::size_t scenarios = 0;
    std::size_t disputes = 0;
    std::size_t false_accusations = 0;
    std::size_t covered = 0, covered_correct = 0;      // violations after signature coverage
    std::size_t in_window = 0, in_window_flagged = 0;  // inside the unsigned window
    std::size_t other_wrong = 0;
    std::size_t injected = 0, disputed = 0;
    std::size_t invariant_failures = 0;  // scenarios whose own invariant table failed
    std::map<std::string, std::size_t> per_kind;
    std::vector<std::string> failures;  // scenario names with a wrong verdict or failed invariant
    Report report() const;
};

// `count` randomized scenarios cycling through every fault kind.
AccountabilitySummary run_accountability(std::size_t count, std::uint64_t seed);

}  // namespace safius
