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

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "safius/audit.hpp"
#include "safius/fileserver.hpp"
#include "safius/report.hpp"

namespace safius {

// Scratch inodes (benchmarks, churn) carry this sequence number. They live
// outside the filesystem and the i-tbl oracle ignores them.
constexpr std::uint32_t kScratchSeq = 0xffffffffu;

struct GroupSpec {
    FgrpId id = 0;
    std::set<PrincipalId> writers, readers;
};

struct NodeSpec {
    FsId id = 0;
    std::set<PrincipalId> uids;
};

struct DeploymentConfig {
    std::vector<NodeSpec> nodes;
    std::vector<GroupSpec> groups;
    FgrpId root_fgrp = 1;
    PrincipalId admin = 1;  // formats the volume
    VmConfig vm;
    ServerConfig server;
    LhashConfig lhash;
    CostTable costs;
    std::uint64_t lock_drop_interval = 30000;
    std::uint64_t key_seed = 7;
};

// Two nodes, three users (1 and 3 on node 1, 2 on node 2), a public root
// group 1 and two shared groups: 2 = {1,2}, 3 = {2,3}.
DeploymentConfig default_deployment();

// One l-hash server, one storage server and N fileservers wired over a
// single Env.
class Deployment {
public:
    Deployment(const DeploymentConfig& cfg, std::uint64_t seed);
    ~Deployment();
    Deployment(const Deployment&) = delete;
    Deployment& operator=(const Deployment&) = delete;

    // Defines filegroups, mounts every node and formats the root directory.
    void format();

    Fileserver& fs(FsId id);
    std::vector<FsId> node_ids() const;
    FsId node_of(PrincipalId uid) const;
    const DeploymentConfig& config() const { return cfg_; }

    // Restarts every actor marked down; the l-hash server goes first.
    std::vector<std::string> recover();
    // One timer round on every actor.
    void timers();
    // Flush, drain and settle until nothing changes (bounded).
    void quiesce(int rounds = 8);

    // Omniscient views, used for oracles and fault targeting only.
    std::map<InodeNumber, Idata> user_itbl() const;
    std::map<Digest, std::map<InodeNumber, std::uint64_t>> server_refs() const;
    std::optional<Inode> peek_inode(InodeNumber ino) const;
    std::optional<InodeNumber> peek_lookup(const std::string& path) const;
    std::optional<Digest> peek_block(const std::string& path, std::size_t index) const;
    // Every block reachable from the committed version of ino, with repeats.
    std::optional<std::vector<Digest>> peek_reachable(InodeNumber ino) const;
    // Per-inode reference counts implied by the i-tbl alone.
    std::map<Digest, std::map<InodeNumber, std::uint64_t>> expected_refs() const;

    std::vector<VolumeManager*> volume_managers();

    Env env;
    KeyRegistry keys;
    StorageServer ss;
    StableStorage lhash_disk;
    std::unique_ptr<LhashServer> lhash;
    std::map<FsId, StableStorage> disks;
    std::map<FsId, std::unique_ptr<Fileserver>> nodes;
    FgrpKeyring all_keys;

private:
    std::optional<Bytes> peek_plain(const Digest& blk, FgrpId fgrp) const;
    bool peek_tree(const Digest& root, int depth, FgrpId fgrp, std::vector<Digest>& out) const;

    DeploymentConfig cfg_;
};

struct WorkOp {
    int line = 0;
    FsId node = 0;       // 0 for harness-level ops ("do ...")
    PrincipalId uid = 0;
    std::string verb;
    std::vector<std::string> args;
    std::optional<std::string> expect_value;  // "=text"
    std::optional<Errc> expect_error;         // "!Errc"
};

enum class FaultKind {
    DropBlock,
    ReturnNotFound,
    CorruptBytes,
    RefuseGrant,
    ForgeClaim,   // a client disputes a store it signed
    ForgeCharge,  // the server charges a user for a block nobody stored
    CrashActor,
    DelayMessage,
};

const char* fault_kind_name(FaultKind k);
std::optional<FaultKind> parse_fault_kind(const std::string& s);

struct Fault {
    int line = 0;
    std::size_t at = 0;  // fires before op number `at`
    FaultKind kind = FaultKind::DropBlock;
    std::string path;
    std::size_t block = 0;
    std::uint64_t bit = 0;
    PrincipalId uid = 0;
    std::string actor, point;
    std::uint64_t occurrence = 1;
    std::string from, to, message;
    std::uint64_t ticks = 0;
};

struct FaultPlan {
    std::vector<Fault> faults;
    bool empty() const { return faults.empty(); }
};

struct Scenario {
    std::string name = "scenario";
    DeploymentConfig deploy = default_deployment();
    std::vector<WorkOp> ops;
    FaultPlan faults;
    std::uint64_t seed = 1;
    bool quiesce_at_end = true;
    // Index of the first op of the commit of interest ("do interest"), if any.
    std::optional<std::size_t> interest;
};

struct ScenarioResult {
    Trace trace;
    Report report;
    std::vector<VerdictRecord> verdicts;
    std::size_t violations_injected = 0;
    std::size_t violations_disputed = 0;
    bool ok() const { return report.ok(); }
};

ScenarioResult run_scenario(const Scenario& sc, std::uint64_t seed, const FaultPlan& extra = {});

struct CrashCase {
    PointHit hit;
    std::string outcome;  // "pre", "post" or "neither"
    std::string detail;
    Trace trace;
};

struct CrashSuite {
    std::vector<CrashCase> cases;
    std::size_t distinct_points = 0;
    bool all_consistent() const;
};

CrashSuite enumerate_crash_points(const Scenario& sc, std::uint64_t seed);

// Randomized accountability scenario with one injected fault of `kind`.
Scenario random_fault_scenario(std::uint64_t seed, FaultKind kind);

}  // namespace safius
