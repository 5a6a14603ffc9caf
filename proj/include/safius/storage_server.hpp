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

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "safius/env.hpp"
#include "safius/merkle.hpp"
#include "safius/messages.hpp"

namespace safius {

struct FgrpRecord {
    FgrpId fgrp = 0;
    std::set<PrincipalId> writers;
    std::set<PrincipalId> readers;
    std::uint64_t incarnation = 0;
};

// What the storage server needs from the trusted side to ratify access
// control. Implemented by the l-hash server.
class FgrpDirectory {
public:
    virtual ~FgrpDirectory() = default;
    virtual Digest current_fgrphash() const = 0;
    virtual std::optional<FgrpRecord> fgrp_record(InodeNumber ino) const = 0;
};

struct StoredBlock {
    Bytes data;
    std::map<InodeNumber, std::uint64_t> refs;  // per-inode reference counts

    bool live() const { return !refs.empty(); }
};

struct PendingOp {
    PrincipalId uid = 0;
    BatchEntry entry;
    std::uint64_t at = 0;
    friend bool operator==(const PendingOp&, const PendingOp&) = default;
};

struct RejectInfo {
    std::optional<std::size_t> entry_index;
    std::string reason;
};

struct PruneMismatch {
    Divergence divergence;
    Digest blknum;
};

using PruneReply = std::variant<SignedRoot, PruneMismatch>;

// Everything the server can present to an auditor.
struct ServerEvidence {
    std::vector<RequestBatch> request_batches;
    std::vector<SignedRequest> request_singles;
    std::vector<PendingOp> pending;
    std::map<Digest, UidCounts> charged;   // signed refcnt tree contents
    std::optional<SignedRoot> last_signed_root;
    std::vector<PendingOp> rolled_back;
};

struct ServerConfig {
    bool require_signatures = true;
    // Pending ops older than this many ticks are rolled back.
    std::uint64_t pending_deadline = 2000;
};

// Byzantine behaviours the harness can switch on.
struct ServerFaults {
    std::set<Digest> report_not_found;
    std::map<Digest, std::uint64_t> corrupt_on_load;  // bit index to flip
    std::set<PrincipalId> refuse_grant_for;
};

struct ServerStats {
    std::uint64_t loads = 0, stores = 0, frees = 0, grants = 0, rejects = 0;
    std::uint64_t sign_calls = 0, verify_calls = 0, rollbacks = 0;
};

// The untrusted content-addressed block store. It never holds filegroup keys:
// block bytes are opaque ciphertext named by their digest.
class StorageServer {
public:
    StorageServer(Env& env, const KeyRegistry& keys, ServerConfig config = {}, std::string name = "ss");

    void attach_directory(const FgrpDirectory* dir, std::string lhash_name = "lhash");
    const std::string& name() const { return name_; }
    const ServerConfig& config() const { return config_; }

    // Nonce establishment; a nonce is accepted once per principal.
    void open_session(const SessionNonce& s);

    Bytes load(const Digest& blknum);

    // Unsigned-window operations: applied now, covered by a later batch.
    void handle_store(ByteView data, const BatchEntry& entry, PrincipalId uid);
    void handle_free(const BatchEntry& entry, PrincipalId uid);

    // Atomic: either every entry is accepted and a grant returned, or
    // Error(Reject) is thrown and state is untouched.
    GrantBatch verify_and_grant(const RequestBatch& batch, const std::map<Digest, Bytes>& data_blocks);

    // Synchronous per-operation signing path.
    GrantSingle handle_signed(const SignedRequest& req, ByteView data);

    // Pruning counterpart. The l-hash tree is passed so that a mismatch can
    // be localised by joint descent.
    PruneReply server_prune_round(const Digest& lhash_root, const RefcntTree& lhash_tree);

    // Roll back pending ops past their deadline.
    void tick();

    // Inspection.
    const std::map<Digest, StoredBlock>& blocks() const { return blocks_; }
    // Net stores minus frees per requester. Outlives reclamation of the block.
    std::map<PrincipalId, std::int64_t> per_uid(const Digest& blknum) const;
    const RefcntTree& refcnt_tree() const { return tree_; }
    std::size_t pending_count(PrincipalId uid) const;
    std::size_t pending_total() const;
    std::size_t retained_request_signatures() const;
    ServerEvidence evidence() const;
    const ServerStats& stats() const { return stats_; }
    std::optional<RejectInfo> last_reject() const { return last_reject_; }

    // Byzantine controls.
    ServerFaults& faults() { return faults_; }
    void drop_block(const Digest& blknum);
    // Charge an owner for a block nobody asked to store.
    void forge_charge(const Digest& blknum, PrincipalId owner);

private:
    struct UndoStep {
        OpKind op;
        PrincipalId uid;
        BatchEntry entry;
    };

    bool may_write(PrincipalId uid, InodeNumber ino);
    void check_session(PrincipalId uid, const BatchEntry& e) const;
    void apply(OpKind op, PrincipalId uid, const BatchEntry& e, ByteView data);
    void unapply(const UndoStep& u);
    void sweep(const Digest& blknum);
    void mark_seen(PrincipalId uid, const BatchEntry& e) { seen_.insert({uid, e.nonce, e.count}); }
    bool seen(PrincipalId uid, const BatchEntry& e) const { return seen_.count({uid, e.nonce, e.count}) != 0; }
    void add_pending(PrincipalId uid, const BatchEntry& e);
    void commit_signed(PrincipalId uid, const BatchEntry& e);
    [[noreturn]] void reject(std::optional<std::size_t> index, const std::string& why);

    Env& env_;
    const KeyRegistry& keys_;
    ServerConfig config_;
    std::string name_;
    const FgrpDirectory* dir_ = nullptr;
    std::string lhash_name_;

    std::map<Digest, StoredBlock> blocks_;
    std::map<Digest, std::map<PrincipalId, std::int64_t>> ledger_;
    std::map<PrincipalId, std::set<Nonce>> sessions_;
    std::set<std::tuple<PrincipalId, Nonce, std::uint64_t>> seen_;
    std::map<PrincipalId, std::deque<PendingOp>> pending_;
    std::map<Digest, std::size_t> pending_refs_;

    RefcntTree tree_;
    std::vector<RequestBatch> retained_batches_;
    std::vector<SignedRequest> retained_singles_;
    std::map<Digest, GrantBatch> granted_;
    std::map<Digest, GrantSingle> granted_singles_;
    std::optional<SignedRoot> last_root_;
    std::uint64_t prune_epoch_ = 0;
    std::vector<PendingOp> rolled_back_;

    // Filegroup cache, valid for one fgrphash.
    std::optional<Digest> cache_hash_;
    std::map<InodeNumber, std::optional<FgrpRecord>> fgrp_cache_;

    ServerFaults faults_;
    ServerStats stats_;
    std::optional<RejectInfo> last_reject_;
};

}  // namespace safius
