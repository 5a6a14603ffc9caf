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

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "safius/lhash_server.hpp"
#include "safius/volume_manager.hpp"

namespace safius {

constexpr std::size_t kBlockSize = 4096;
constexpr std::size_t kDirectPointers = 12;
constexpr std::size_t kIndirectLevels = 3;

enum class InodeType : std::uint8_t { File = 1, Directory = 2 };

struct Inode {
    InodeType type = InodeType::File;
    std::uint64_t size = 0;
    FgrpId fgrp = 0;
    std::uint32_t link_count = 1;
    std::array<Digest, kDirectPointers> direct{};
    std::array<Digest, kIndirectLevels> indirect{};
    friend bool operator==(const Inode&, const Inode&) = default;
};

Bytes encode_inode(const Inode& ino);
Inode decode_inode(ByteView b);
// Pointers per indirect block at the configured digest width.
std::size_t indirect_fanout();

struct DirEntry {
    std::string name;
    InodeNumber ino;
    friend bool operator==(const DirEntry&, const DirEntry&) = default;
};

Bytes encode_dir(const std::vector<DirEntry>& entries);
std::vector<DirEntry> decode_dir(ByteView b);

struct UndoInode {
    InodeNumber ino;
    Idata old_idata;
    Digest new_hash;  // zero for a deletion
    bool created = false;
    std::vector<Digest> free_on_commit;
    std::vector<Digest> free_on_abort;
    friend bool operator==(const UndoInode&, const UndoInode&) = default;
};

struct UndoRecord {
    std::uint64_t txid = 0;
    PrincipalId uid = 0;
    std::vector<UndoInode> inodes;
    friend bool operator==(const UndoRecord&, const UndoRecord&) = default;
};

Bytes encode_undo(const UndoRecord& u);
UndoRecord decode_undo(ByteView b);

struct FsConfig {
    FsId node_id = 1;
    std::set<PrincipalId> uids;
    std::uint64_t lock_drop_interval = 30000;
    VmConfig vm;
    // Rewrite the journal after this many finished transactions.
    std::size_t compact_every = 16;
};

struct RecoveryReport {
    std::optional<std::uint64_t> in_doubt_txid;
    bool committed = false;
    bool aborted = false;
    std::size_t frees = 0;
    std::size_t orphans_deleted = 0;
    ReplayReport replay;
    bool empty() const { return !in_doubt_txid && replay.empty() && orphans_deleted == 0; }
};

struct CommitStats {
    std::uint64_t commits = 0, aborts = 0;
    std::uint64_t last_blocks_written = 0, last_blocks_freed = 0;
};

// One fileserver: filesystem over the volume manager, store-inode-data client
// and lock client. All state beyond the local disk is a cache.
class Fileserver : public LockClient {
public:
    Fileserver(Env& env, FsConfig config, const KeyRegistry& keys, FgrpKeyring keyring, StorageServer& ss,
               LhashServer& lhash, StableStorage& disk, std::uint64_t seed);
    ~Fileserver() override;

    const std::string& actor() const { return actor_; }
    FsId node_id() const { return config_.node_id; }

    // Formats the volume: creates an empty root directory.
    void mkfs(PrincipalId uid);
    // Registers with the l-hash server and collects freed inode numbers.
    std::vector<InodeNumber> mount();

    InodeNumber lookup(const std::string& path, PrincipalId uid);
    InodeNumber create(const std::string& path, PrincipalId uid, FgrpId fgrp);
    InodeNumber mkdir(const std::string& path, PrincipalId uid, FgrpId fgrp);
    void unlink(const std::string& path, PrincipalId uid);
    std::vector<DirEntry> readdir(const std::string& path, PrincipalId uid);
    InodeNumber open(const std::string& path, PrincipalId uid);
    void close(InodeNumber ino);
    Bytes read(InodeNumber ino, std::uint64_t offset, std::size_t len, PrincipalId uid);
    void write(InodeNumber ino, std::uint64_t offset, ByteView data, PrincipalId uid);
    Inode stat(InodeNumber ino, PrincipalId uid);

    // Commits every dirty inode in one store-inode-data exchange.
    std::optional<std::uint64_t> commit();
    void abort();
    bool dirty() const { return !tx_.empty(); }
    // Finishes a transaction left in doubt by an unreachable l-hash server.
    void resolve_in_doubt();
    bool in_doubt() const { return in_doubt_.has_value(); }

    // Drop volatile state, as after a crash, and recover from the local disk.
    RecoveryReport restart();
    void on_timer();

    // Lock client callbacks.
    void on_revoke(InodeNumber ino, LockMode wanted) override;
    void on_lock_granted(InodeNumber ino, LockMode mode, Idata idata) override;
    void on_lock_denied(InodeNumber ino, Errc why) override;

    VolumeManager& vm() { return *vm_; }
    const CommitStats& commit_stats() const { return stats_; }
    std::set<std::uint32_t> bitmap(PrincipalId uid) const;
    std::map<InodeNumber, LockMode> held_locks() const;
    // Every block reachable from a committed idata.
    std::vector<Digest> reachable_blocks(const Idata& d, FgrpId fgrp);
    std::uint64_t next_txid() const { return txid_ + 1; }

private:
    struct Held {
        LockMode mode = LockMode::Shared;
        Idata idata;
        std::uint64_t last_used = 0;
        // The lock is per node; the l-hash server vouches for each user separately.
        std::set<std::pair<PrincipalId, LockMode>> vouched;
    };
    struct TxInode {
        Idata base;
        Inode inode;
        std::map<std::uint64_t, Bytes> leaves;  // block index -> plaintext
        bool created = false;
        bool deleted = false;
    };
    struct Waiting {
        std::optional<LockMode> granted_mode;
        Idata idata;
        std::optional<Errc> denied;
    };
    struct OpScope {
        explicit OpScope(Fileserver& fs);
        ~OpScope();
        Fileserver& fs_;
    };

    void boot();
    Idata lock(InodeNumber ino, LockMode mode, PrincipalId uid);
    void drop_lock(InodeNumber ino);
    FgrpId fgrp_of(InodeNumber ino);
    Inode load_committed(InodeNumber ino, const Idata& d);
    // Current view: the open transaction's copy if any, else committed.
    Inode view(InodeNumber ino, PrincipalId uid, LockMode mode);
    TxInode& dirty_inode(InodeNumber ino, PrincipalId uid, bool unlinked_ok = false);
    Bytes read_leaf(InodeNumber ino, const Inode& inode, std::uint64_t idx);
    Digest pointer(const Inode& inode, std::uint64_t idx);
    std::vector<Digest> read_node(const Digest& d, FgrpId fgrp);
    Bytes file_bytes(InodeNumber ino, const Inode& inode, std::uint64_t off, std::size_t len);
    void put_bytes(InodeNumber ino, PrincipalId uid, std::uint64_t off, ByteView data);
    std::vector<DirEntry> dir_entries(InodeNumber dir, PrincipalId uid, LockMode mode);
    void write_dir(InodeNumber dir, PrincipalId uid, const std::vector<DirEntry>& entries);
    std::pair<InodeNumber, std::string> parent_of(const std::string& path, PrincipalId uid);
    InodeNumber make(const std::string& path, PrincipalId uid, FgrpId fgrp, InodeType type);
    std::uint32_t alloc_seq(PrincipalId uid);
    void set_bit(InodeNumber ino, bool on);
    void delete_now(InodeNumber ino, PrincipalId uid);
    void check_live(InodeNumber ino, const Inode& inode, const Idata& d);

    Digest rebuild(const Digest& old_root, int depth, std::uint64_t base, FgrpId fgrp, InodeNumber ino, PrincipalId uid,
                   const std::map<std::uint64_t, Digest>& leaves, UndoInode& undo,
                   std::vector<VolumeManager::WriteReq>& writes);
    void collect_blocks(const Digest& root, int depth, FgrpId fgrp, std::vector<Digest>& out);
    void finish(const UndoRecord& u, bool committed);
    void maybe_compact();
    void process_deferred();

    Env& env_;
    FsConfig config_;
    std::string actor_;
    const KeyRegistry& keys_;
    FgrpKeyring keyring_;
    StorageServer& ss_;
    LhashServer& lhash_;
    StableStorage& disk_;
    std::uint64_t seed_;
    std::unique_ptr<VolumeManager> vm_;

    std::map<InodeNumber, Held> held_;
    std::map<InodeNumber, Waiting> waiting_;
    std::map<InodeNumber, FgrpId> fgrp_cache_;
    std::map<InodeNumber, TxInode> tx_;
    PrincipalId tx_uid_ = 0;
    std::optional<UndoRecord> in_doubt_;
    std::uint64_t txid_ = 0;
    std::map<InodeNumber, int> open_refs_;
    std::set<InodeNumber> orphans_;
    std::vector<std::pair<InodeNumber, LockMode>> deferred_revokes_;
    int busy_ = 0;
    std::size_t finished_since_compact_ = 0;
    CommitStats stats_;
};

}  // namespace safius
