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
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "safius/merkle.hpp"
#include "safius/storage_server.hpp"
#include "safius/volume_manager.hpp"

namespace safius {

enum class LockMode : std::uint8_t { Shared = 1, Exclusive = 2 };

const char* lock_mode_name(LockMode m);

// Callbacks the l-hash server routes to a fileserver's lock client.
class LockClient {
public:
    virtual ~LockClient() = default;
    // Another node wants `wanted`; downgrade or release when possible.
    virtual void on_revoke(InodeNumber ino, LockMode wanted) = 0;
    virtual void on_lock_granted(InodeNumber ino, LockMode mode, Idata idata) = 0;
    virtual void on_lock_denied(InodeNumber ino, Errc why) = 0;
};

struct LockGrant {
    bool granted = false;
    Idata idata;
};

struct LockState {
    std::map<FsId, LockMode> holders;
    struct Waiter {
        FsId fs = 0;
        LockMode mode = LockMode::Shared;
        std::uint64_t since = 0;
    };
    std::deque<Waiter> waiters;
};

struct LhashConfig {
    std::uint64_t deadlock_timeout = 5000;
    // Checkpoint the i-tbl to the block store after this many commits (0: only on request).
    std::uint64_t checkpoint_every = 0;
    VmConfig vm;
};

struct PruneResult {
    bool agreed = false;
    std::optional<SignedRoot> root;
    std::optional<PruneMismatch> mismatch;
    std::size_t evidence_before = 0;
    std::size_t evidence_after = 0;
};

struct LhashStats {
    std::uint64_t commits = 0, replays = 0, checkpoints = 0, grants_persisted = 0, prunes = 0;
    std::uint64_t verify_calls = 0, callbacks = 0;
};

// The trusted server: locks, the i-tbl, the filegroup tree, the signature
// vault and the mirror refcnt tree. Its in-memory state is a cache of its
// stable storage; restart() rebuilds it from there.
class LhashServer : public FgrpDirectory, public GrantSink {
public:
    LhashServer(Env& env, const KeyRegistry& keys, StorageServer& ss, StableStorage& disk, FgrpKeyring system_keys,
                LhashConfig config = {}, std::uint64_t seed = 1, std::string name = "lhash");
    ~LhashServer() override;

    const std::string& name() const { return name_; }
    // Drop all volatile state and recover from stable storage.
    void restart();

    void register_client(FsId fs, std::string actor, LockClient* client);

    // Locks.
    LockGrant acquire_lock(FsId fs, PrincipalId uid, InodeNumber ino, LockMode mode);
    void release_lock(FsId fs, InodeNumber ino);
    void downgrade_lock(FsId fs, InodeNumber ino);
    std::optional<LockMode> held(FsId fs, InodeNumber ino) const;
    const std::map<InodeNumber, LockState>& locks() const { return locks_; }
    // Expire waiters and run due checkpoints.
    void tick();

    // i-tbl.
    std::uint64_t store_inode_data(FsId fs, PrincipalId uid, const StoreInodeDataMsg& msg);
    std::uint64_t last_txid(FsId fs) const;
    std::optional<Idata> idata(InodeNumber ino) const;
    const std::map<InodeNumber, Idata>& itbl() const { return itbl_; }
    void checkpoint();
    std::optional<Idata> itbl_root() const { return itbl_root_; }
    std::vector<InodeNumber> freed_inode_list(FsId fs);

    // Filegroups.
    void fgrp_define(FgrpId fgrp, std::set<PrincipalId> writers, std::set<PrincipalId> readers);
    // Assigns a filegroup to an inode not yet in the i-tbl; owner only.
    void fgrp_register(PrincipalId uid, InodeNumber ino, FgrpId fgrp);
    void fgrp_update(PrincipalId uid, InodeNumber ino, FgrpId fgrp);
    // Administrative assignment, used when formatting a volume.
    void fgrp_assign(InodeNumber ino, FgrpId fgrp);
    std::optional<FgrpId> fgrp_lookup(InodeNumber ino) const;
    std::uint64_t fgrp_incarnation() const { return fgrp_incarnation_; }
    Digest fgrp_root() const { return fgrp_tree_.root(); }
    Digest current_fgrphash() const override;
    std::optional<FgrpRecord> fgrp_record(InodeNumber ino) const override;

    // Signature persistence.
    void persist_grant(PrincipalId uid, const GrantBatch& g) override;
    void persist_grant_single(const SignedRequest& req, const GrantSingle& g) override;
    bool has_grant(const Digest& request_payload) const override;
    PruneResult lhash_prune_round();

    const RefcntTree& refcnt_tree() const { return tree_; }
    std::vector<GrantBatch> vault_batches() const;
    std::vector<std::pair<SignedRequest, GrantSingle>> vault_singles() const;
    std::size_t vault_records() const { return vault_batches_.size() + vault_singles_.size(); }
    // Vault records plus the leaves and signed root retained by the last agreement.
    std::size_t evidence_size() const;
    const std::optional<SignedRoot>& last_signed_root() const { return signed_root_; }
    const std::map<Digest, UidCounts>& agreed_leaves() const { return agreed_leaves_; }

    VolumeManager& vm() { return *vm_; }
    const LhashStats& stats() const { return stats_; }

private:
    struct Client {
        std::string actor;
        LockClient* client = nullptr;
    };
    struct FgrpDef {
        std::set<PrincipalId> writers, readers;
    };

    void load();
    void load_fgrp();
    void save_fgrp();
    void bump_fgrp();
    void load_vault();
    void load_itbl();
    void replay_wal();
    void apply_commit(FsId fs, std::uint64_t seq, const StoreInodeDataMsg& finals);
    void save_lock(InodeNumber ino);
    void grant_waiters(InodeNumber ino);
    void notify_revoke(FsId holder, InodeNumber ino, LockMode wanted);
    bool compatible(const LockState& s, FsId fs, LockMode mode) const;
    bool may_access(PrincipalId uid, InodeNumber ino, LockMode mode) const;
    bool may_update(PrincipalId uid, InodeNumber ino) const;
    void apply_tree(const BatchEntry& e);
    bool verify(PrincipalId who, const Digest& d, const Signature& s);

    Env& env_;
    const KeyRegistry& keys_;
    StorageServer& ss_;
    StableStorage& disk_;
    FgrpKeyring system_keys_;
    LhashConfig config_;
    std::uint64_t seed_;
    std::string name_;
    std::unique_ptr<VolumeManager> vm_;

    std::map<FsId, Client> clients_;
    std::map<InodeNumber, LockState> locks_;

    std::map<InodeNumber, Idata> itbl_;
    std::map<FsId, std::uint64_t> txmem_;
    std::optional<Idata> itbl_root_;
    std::vector<Digest> itbl_blocks_;
    std::uint64_t ckpt_seq_ = 0;
    std::uint64_t wal_seq_ = 0;
    std::uint64_t commits_since_ckpt_ = 0;
    std::map<FsId, std::set<InodeNumber>> freed_;

    MerkleMap fgrp_tree_;
    std::map<FgrpId, FgrpDef> fgrp_defs_;
    std::uint64_t fgrp_incarnation_ = 0;

    std::map<Digest, GrantBatch> vault_batches_;
    std::map<Digest, std::pair<SignedRequest, GrantSingle>> vault_singles_;
    std::set<Digest> granted_;
    RefcntTree tree_;
    std::map<Digest, UidCounts> agreed_leaves_;
    std::optional<SignedRoot> signed_root_;

    LhashStats stats_;
};

}  // namespace safius
