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
#include <random>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "safius/env.hpp"
#include "safius/messages.hpp"
#include "safius/stable_storage.hpp"
#include "safius/storage_server.hpp"

namespace safius {

// Where verified grants are sent for safekeeping (the l-hash server).
class GrantSink {
public:
    virtual ~GrantSink() = default;
    virtual void persist_grant(PrincipalId uid, const GrantBatch& g) = 0;
    virtual void persist_grant_single(const SignedRequest& req, const GrantSingle& g) = 0;
    virtual bool has_grant(const Digest& request_payload) const = 0;
};

enum class SignMode { NoSign, Sync, Async };

const char* sign_mode_name(SignMode m);
SignMode parse_sign_mode(const std::string& s);

struct VmConfig {
    SignMode mode = SignMode::Async;
    std::size_t threshold = 1000;
    std::uint64_t timeout = 1000;  // ticks since the batch's first entry
};

struct VmCounters {
    std::uint64_t sign_calls = 0;
    std::uint64_t verify_calls = 0;
    std::uint64_t hotpath_crypto_calls = 0;
    std::uint64_t retransmits = 0;
    std::uint64_t flushes = 0;
    std::uint64_t threshold_flushes = 0;
    std::uint64_t timeout_flushes = 0;
    std::uint64_t retries = 0;
    std::uint64_t decrypts = 0;
    std::uint64_t ops = 0;
};

// Something the volume manager noticed that an auditor should look at.
struct VmEvent {
    enum class Kind { StoreRejected, FreeRejected, GrantRefused, BadGrant, LoadMiss, BadBlockBytes };
    Kind kind;
    PrincipalId uid = 0;
    Digest blknum;
    InodeNumber ino;
    std::string reason;
    Bytes returned_bytes;                // BadBlockBytes
    std::optional<RequestBatch> request; // GrantRefused / BadGrant
};

const char* vm_event_name(VmEvent::Kind k);

struct LocalLogEntry {
    BatchEntry entry;
    PrincipalId uid = 0;
    std::optional<Bytes> data;  // ciphertext, stores only
    friend bool operator==(const LocalLogEntry&, const LocalLogEntry&) = default;
};

Bytes encode_log_entry(const LocalLogEntry& e);
LocalLogEntry decode_log_entry(Reader& r);

struct ReplayReport {
    std::vector<LocalLogEntry> retransmitted;
    std::vector<LocalLogEntry> acknowledged;
    std::size_t resent_batches = 0;
    bool empty() const { return retransmitted.empty() && resent_batches == 0; }
};

// Per-fileserver block layer: encrypt, hash, store, integrity-check on load,
// the local retry log, and asynchronous batched signing. The log lives in
// the actor's "journal" file, which co-located modules also use for their own
// records (attachments), so that a block write and the record naming it can be
// made durable in a single append.
class VolumeManager {
public:
    struct WriteReq {
        Bytes plaintext;
        InodeNumber ino;
        PrincipalId uid = 0;
        FgrpId fgrp = 0;
    };
    struct FreeReq {
        Digest blknum;
        InodeNumber ino;
        PrincipalId uid = 0;
    };

    VolumeManager(Env& env, std::string actor, StableStorage& disk, const KeyRegistry& keys, FgrpKeyring keyring,
                  StorageServer& ss, GrantSink* sink, VmConfig config, std::uint64_t seed,
                  std::string sink_actor = "lhash");
    ~VolumeManager();
    VolumeManager(const VolumeManager&) = delete;
    VolumeManager& operator=(const VolumeManager&) = delete;

    const std::string& actor() const { return actor_; }
    const VmConfig& config() const { return config_; }
    void set_sink(GrantSink* sink, std::string sink_actor);

    // Hot path: no asymmetric crypto in async mode.
    Digest vm_write(ByteView plaintext, InodeNumber ino, PrincipalId uid, FgrpId fgrp);
    Bytes vm_read(const Digest& blknum, FgrpId fgrp);
    void vm_free(const Digest& blknum, InodeNumber ino, PrincipalId uid);

    // Encrypts and names a block without storing it.
    Bytes seal(ByteView plaintext, FgrpId fgrp) const;
    // Logs all ops plus the attachments in one durable append, then sends.
    std::vector<Digest> write_group(const std::vector<WriteReq>& writes, const std::vector<FreeReq>& frees,
                                    std::vector<Bytes> attachments);
    void append_attachment(Bytes record);
    std::vector<Bytes> attachments() const;
    // Rewrites the journal keeping only live log entries and the given attachments.
    void compact(const std::vector<Bytes>& live_attachments);

    std::optional<GrantBatch> flush_batch(PrincipalId uid);
    void flush_all();
    // Timer event: flush batches whose age reached the timeout.
    void on_timer();

    ReplayReport vm_recover();

    const VmCounters& counters() const { return counters_; }
    const std::vector<VmEvent>& events() const { return events_; }
    std::size_t live_entries() const { return live_.size(); }
    std::size_t pending_entries() const;
    std::vector<LocalLogEntry> live_log() const;
    std::vector<GrantBatch> verified_grants() const { return grants_; }
    std::size_t journal_records() const;

private:
    using Key = std::tuple<PrincipalId, Nonce, std::uint64_t>;
    struct Session {
        Nonce nonce = 0;
        std::uint64_t next_count = 1;
    };
    struct Pending {
        std::vector<BatchEntry> entries;
        std::uint64_t first_at = 0;
    };
    struct LiveEntry {
        LocalLogEntry log;
        bool acked = false;
        std::uint64_t order = 0;
    };
    struct HotPathScope {
        explicit HotPathScope(VolumeManager& vm) : vm_(vm) { vm_.hot_ = true; }
        ~HotPathScope() { vm_.hot_ = false; }
        VolumeManager& vm_;
    };

    Session& session(PrincipalId uid);
    BatchEntry next_entry(PrincipalId uid, const Digest& blknum, InodeNumber ino, OpKind op);
    void send(const LocalLogEntry& e);
    void on_reply(const Key& k, std::optional<Errc> err, const std::string& why);
    void release(const std::vector<Key>& keys);
    void sync_exchange(LocalLogEntry e);
    enum class Outcome { Granted, Rejected, Failed };
    Outcome exchange(const RequestBatch& batch, bool resent, bool full_data);
    RequestBatch build_batch(PrincipalId uid, const std::vector<BatchEntry>& entries);
    void unseal(PrincipalId uid);
    void drop_entry(const Key& k, const std::string& why);
    void load_journal();
    Signature sign(PrincipalId uid, const Digest& d);
    bool verify_server(const Digest& d, const Signature& s);
    void record(VmEvent ev);
    void maybe_flush(PrincipalId uid);
    template <typename F>
    auto call_sink(const char* kind, F&& fn) -> decltype(fn());

    static Key key_of(const LocalLogEntry& e) { return {e.uid, e.entry.nonce, e.entry.count}; }

    Env& env_;
    std::string actor_;
    StableStorage& disk_;
    const KeyRegistry& keys_;
    FgrpKeyring keyring_;
    StorageServer& ss_;
    GrantSink* sink_;
    std::string sink_actor_;
    VmConfig config_;
    std::mt19937_64 rng_;

    bool hot_ = false;
    bool want_full_ = false;
    std::uint64_t order_ = 0;
    std::map<PrincipalId, Session> sessions_;
    std::map<PrincipalId, Pending> pending_;
    std::map<PrincipalId, RequestBatch> sealed_;
    std::shared_ptr<VolumeManager*> alive_;
    std::map<Key, LiveEntry> live_;
    std::vector<GrantBatch> grants_;
    std::vector<VmEvent> events_;
    VmCounters counters_;
};

}  // namespace safius
