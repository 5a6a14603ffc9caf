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

#include "safius/volume_manager.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <set>

namespace safius {

namespace {

constexpr const char* kJournal = "journal";

enum class JournalKind : std::uint8_t { Group = 1, Release = 2, Sealed = 3, Unseal = 4 };

}  // namespace

const char* sign_mode_name(SignMode m)
{
    switch (m) {
    case SignMode::NoSign: return "no-sign";
    case SignMode::Sync: return "sync-sign";
    case SignMode::Async: return "async-sign";
    }
    return "?";
}

SignMode parse_sign_mode(const std::string& s)
{
    if (s == "no-sign") return SignMode::NoSign;
    if (s == "sync-sign" || s == "sync") return SignMode::Sync;
    if (s == "async-sign" || s == "async") return SignMode::Async;
    raise(Errc::Config, "unknown signing mode '" + s + "'");
}

const char* vm_event_name(VmEvent::Kind k)
{
    switch (k) {
    case VmEvent::Kind::StoreRejected: return "StoreRejected";
    case VmEvent::Kind::FreeRejected: return "FreeRejected";
    case VmEvent::Kind::GrantRefused: return "GrantRefused";
    case VmEvent::Kind::BadGrant: return "BadGrant";
    case VmEvent::Kind::LoadMiss: return "LoadMiss";
    case VmEvent::Kind::BadBlockBytes: return "BadBlockBytes";
    }
    return "?";
}

Bytes encode_log_entry(const LocalLogEntry& e)
{
    Writer w;
    put_entry(w, e.entry);
    w.u32(e.uid);
    w.u8(e.data ? 1 : 0);
    if (e.data) w.bytes(*e.data);
    return std::move(w).take();
}

LocalLogEntry decode_log_entry(Reader& r)
{
    LocalLogEntry e;
    e.entry = get_entry(r);
    e.uid = r.u32("log.uid");
    if (r.u8("log.has_data")) e.data = r.bytes("log.data");
    return e;
}

VolumeManager::VolumeManager(Env& env, std::string actor, StableStorage& disk, const KeyRegistry& keys,
                             FgrpKeyring keyring, StorageServer& ss, GrantSink* sink, VmConfig config,
                             std::uint64_t seed, std::string sink_actor)
    : env_(env),
      actor_(std::move(actor)),
      disk_(disk),
      keys_(keys),
      keyring_(std::move(keyring)),
      ss_(ss),
      sink_(sink),
      sink_actor_(std::move(sink_actor)),
      config_(config),
      rng_(seed),
      alive_(std::make_shared<VolumeManager*>(this))
{
    load_journal();
}

VolumeManager::~VolumeManager() = default;

void VolumeManager::set_sink(GrantSink* sink, std::string sink_actor)
{
    sink_ = sink;
    sink_actor_ = std::move(sink_actor);
}

void VolumeManager::load_journal()
{
    live_.clear();
    sealed_.clear();
    pending_.clear();
    order_ = 0;
    for (const Bytes& rec : disk_.records(kJournal)) {
        Reader r(rec);
        auto kind = static_cast<JournalKind>(r.u8("journal.kind"));
        switch (kind) {
        case JournalKind::Group: {
            std::uint32_t na = r.u32("journal.attachments");
            for (std::uint32_t i = 0; i < na; ++i) r.bytes("journal.attachment");
            std::uint32_t n = r.u32("journal.ops");
            for (std::uint32_t i = 0; i < n; ++i) {
                LocalLogEntry e = decode_log_entry(r);
                live_[key_of(e)] = LiveEntry{e, false, order_++};
            }
            break;
        }
        case JournalKind::Release: {
            std::uint32_t n = r.u32("journal.released");
            for (std::uint32_t i = 0; i < n; ++i) {
                PrincipalId uid = r.u32("release.uid");
                Nonce nonce = r.u64("release.nonce");
                std::uint64_t count = r.u64("release.count");
                live_.erase(Key{uid, nonce, count});
            }
            break;
        }
        case JournalKind::Sealed: {
            auto b = decode<RequestBatch>(r.bytes("journal.batch"));
            sealed_[b.header.uid] = b;
            break;
        }
        case JournalKind::Unseal: {
            PrincipalId uid = r.u32("unseal.uid");
            Digest pd = get_digest(r, "unseal.payload");
            auto it = sealed_.find(uid);
            if (it != sealed_.end() && payload_digest(it->second) == pd) sealed_.erase(it);
            break;
        }
        default:
            r.fail("journal.kind", "unknown record kind");
        }
        r.expect_done("journal record");
    }

    std::set<Key> in_sealed;
    for (auto it = sealed_.begin(); it != sealed_.end();) {
        bool any = false;
        for (const auto& e : it->second.entries) {
            Key k{it->first, e.nonce, e.count};
            in_sealed.insert(k);
            any = any || live_.count(k);
        }
        it = any ? std::next(it) : sealed_.erase(it);
    }
    if (config_.mode != SignMode::Async) return;
    for (const auto& le : live_log()) {
        if (in_sealed.count(key_of(le))) continue;
        auto& p = pending_[le.uid];
        if (p.entries.empty()) p.first_at = env_.now();
        p.entries.push_back(le.entry);
    }
}

template <typename F>
auto VolumeManager::call_sink(const char* kind, F&& fn) -> decltype(fn())
{
    // A sink on the same actor is a local call, not a message.
    if (sink_actor_ == actor_) return fn();
    return env_.call(actor_, sink_actor_, kind, std::forward<F>(fn));
}

Signature VolumeManager::sign(PrincipalId uid, const Digest& d)
{
    ++counters_.sign_calls;
    if (hot_) ++counters_.hotpath_crypto_calls;
    env_.charge_sign();
    return keys_.sign(uid, d);
}

bool VolumeManager::verify_server(const Digest& d, const Signature& s)
{
    ++counters_.verify_calls;
    if (hot_) ++counters_.hotpath_crypto_calls;
    env_.charge_verify();
    return s.signer == kStorageServerPrincipal && keys_.verify(kStorageServerPrincipal, d, s);
}

void VolumeManager::record(VmEvent ev)
{
    env_.trace(actor_, std::string("event ") + vm_event_name(ev.kind),
               ev.blknum.short_hex() + " uid=" + std::to_string(ev.uid) + " " + ev.reason);
    events_.push_back(std::move(ev));
}

VolumeManager::Session& VolumeManager::session(PrincipalId uid)
{
    auto it = sessions_.find(uid);
    if (it != sessions_.end()) return it->second;
    for (;;) {
        Nonce n = rng_();
        try {
            env_.call(actor_, ss_.name(), "open_session", [&] { ss_.open_session(SessionNonce{n, uid}); });
            return sessions_.emplace(uid, Session{n, 1}).first->second;
        } catch (const Error& e) {
            if (e.code() != Errc::Replay) throw;
        }
    }
}

BatchEntry VolumeManager::next_entry(PrincipalId uid, const Digest& blknum, InodeNumber ino, OpKind op)
{
    Session* s = &session(uid);
    if (s->next_count == std::numeric_limits<std::uint64_t>::max()) {
        sessions_.erase(uid);
        s = &session(uid);
    }
    return BatchEntry{blknum, ino, op, s->nonce, s->next_count++};
}

Bytes VolumeManager::seal(ByteView plaintext, FgrpId fgrp) const
{
    return encrypt(keyring_.at(fgrp), plaintext);
}

void VolumeManager::send(const LocalLogEntry& e)
{
    StorageServer* ss = &ss_;
    Env* env = &env_;
    Key k = key_of(e);
    std::weak_ptr<VolumeManager*> weak = alive_;
    env_.post(actor_, ss_.name(), e.entry.op == OpKind::Store ? "store" : "free", [ss, env, e, k, weak] {
        std::optional<Errc> err;
        std::string why;
        try {
            if (e.entry.op == OpKind::Store)
                ss->handle_store(*e.data, e.entry, e.uid);
            else
                ss->handle_free(e.entry, e.uid);
        } catch (const Error& x) {
            err = x.code();
            why = x.what();
        }
        env->charge_message();
        if (auto p = weak.lock()) (*p)->on_reply(k, err, why);
    });
}

void VolumeManager::on_reply(const Key& k, std::optional<Errc> err, const std::string& why)
{
    auto it = live_.find(k);
    if (it == live_.end()) return;
    if (!err || *err == Errc::Replay) {
        it->second.acked = true;
        if (config_.mode == SignMode::NoSign) release({k});
        return;
    }
    if (*err == Errc::Unreachable) return;
    drop_entry(k, why);
}

void VolumeManager::drop_entry(const Key& k, const std::string& why)
{
    auto it = live_.find(k);
    if (it == live_.end()) return;
    const LocalLogEntry& le = it->second.log;
    VmEvent ev;
    ev.kind = le.entry.op == OpKind::Store ? VmEvent::Kind::StoreRejected : VmEvent::Kind::FreeRejected;
    ev.uid = le.uid;
    ev.blknum = le.entry.blknum;
    ev.ino = le.entry.ino;
    ev.reason = why;
    record(std::move(ev));
    auto p = pending_.find(le.uid);
    if (p != pending_.end()) {
        auto& v = p->second.entries;
        v.erase(std::remove_if(v.begin(), v.end(),
                               [&](const BatchEntry& b) { return b.nonce == le.entry.nonce && b.count == le.entry.count; }),
                v.end());
    }
    release({k});
}

void VolumeManager::release(const std::vector<Key>& keys)
{
    Writer w;
    w.u8(static_cast<std::uint8_t>(JournalKind::Release));
    std::uint32_t n = 0;
    for (const auto& k : keys) n += live_.count(k) ? 1 : 0;
    if (n == 0) return;
    w.u32(n);
    for (const auto& k : keys) {
        if (!live_.count(k)) continue;
        w.u32(std::get<0>(k));
        w.u64(std::get<1>(k));
        w.u64(std::get<2>(k));
    }
    disk_.append(kJournal, std::move(w).take());
    for (const auto& k : keys) live_.erase(k);
}

Digest VolumeManager::vm_write(ByteView plaintext, InodeNumber ino, PrincipalId uid, FgrpId fgrp)
{
    return write_group({WriteReq{Bytes(plaintext.begin(), plaintext.end()), ino, uid, fgrp}}, {}, {}).front();
}

void VolumeManager::vm_free(const Digest& blknum, InodeNumber ino, PrincipalId uid)
{
    write_group({}, {FreeReq{blknum, ino, uid}}, {});
}

Bytes VolumeManager::vm_read(const Digest& blknum, FgrpId fgrp)
{
    Bytes ct;
    try {
        ct = env_.call(actor_, ss_.name(), "load", [&] { return ss_.load(blknum); });
    } catch (const Error& e) {
        if (e.code() == Errc::NotFound) {
            VmEvent ev;
            ev.kind = VmEvent::Kind::LoadMiss;
            ev.blknum = blknum;
            ev.reason = e.what();
            record(std::move(ev));
        }
        throw;
    }
    env_.charge_hash(ct.size());
    if (digest(ct) != blknum) {
        VmEvent ev;
        ev.kind = VmEvent::Kind::BadBlockBytes;
        ev.blknum = blknum;
        ev.reason = "returned bytes do not hash to the block number";
        ev.returned_bytes = ct;
        record(std::move(ev));
        raise(Errc::IntegrityFailure, "block " + blknum.short_hex() + " failed integrity check");
    }
    ++counters_.decrypts;
    return decrypt(keyring_.at(fgrp), ct);
}

std::vector<Digest> VolumeManager::write_group(const std::vector<WriteReq>& writes, const std::vector<FreeReq>& frees,
                                               std::vector<Bytes> attachments)
{
    std::vector<Digest> out;
    std::set<PrincipalId> uids;
    {
        HotPathScope hot(*this);
        std::vector<LocalLogEntry> ents;
        for (const auto& w : writes) {
            Bytes ct = seal(w.plaintext, w.fgrp);
            env_.charge_hash(ct.size());
            Digest blk = digest(ct);
            ents.push_back(LocalLogEntry{next_entry(w.uid, blk, w.ino, OpKind::Store), w.uid, std::move(ct)});
            out.push_back(blk);
        }
        for (const auto& f : frees)
            ents.push_back(LocalLogEntry{next_entry(f.uid, f.blknum, f.ino, OpKind::Free), f.uid, std::nullopt});

        Writer w;
        w.u8(static_cast<std::uint8_t>(JournalKind::Group));
        w.u32(static_cast<std::uint32_t>(attachments.size()));
        for (const auto& a : attachments) w.bytes(a);
        w.u32(static_cast<std::uint32_t>(ents.size()));
        for (const auto& e : ents) w.raw(encode_log_entry(e));
        disk_.append(kJournal, std::move(w).take());
        for (const auto& e : ents) {
            live_[key_of(e)] = LiveEntry{e, false, order_++};
            ++counters_.ops;
        }
        env_.point(actor_, "vm.write.logged");

        for (const auto& e : ents) {
            uids.insert(e.uid);
            if (config_.mode == SignMode::Sync) {
                sync_exchange(e);
                continue;
            }
            if (config_.mode == SignMode::Async) {
                auto& p = pending_[e.uid];
                if (p.entries.empty()) p.first_at = env_.now();
                p.entries.push_back(e.entry);
            }
            send(e);
        }
        env_.point(actor_, "vm.write.sent");
    }
    for (PrincipalId uid : uids) maybe_flush(uid);
    return out;
}

void VolumeManager::append_attachment(Bytes record)
{
    write_group({}, {}, {std::move(record)});
}

std::vector<Bytes> VolumeManager::attachments() const
{
    std::vector<Bytes> out;
    for (const Bytes& rec : disk_.records(kJournal)) {
        Reader r(rec);
        if (static_cast<JournalKind>(r.u8("journal.kind")) != JournalKind::Group) continue;
        std::uint32_t na = r.u32("journal.attachments");
        for (std::uint32_t i = 0; i < na; ++i) out.push_back(r.bytes("journal.attachment"));
    }
    return out;
}

void VolumeManager::compact(const std::vector<Bytes>& live_attachments)
{
    std::vector<Bytes> recs;
    Writer w;
    w.u8(static_cast<std::uint8_t>(JournalKind::Group));
    w.u32(static_cast<std::uint32_t>(live_attachments.size()));
    for (const auto& a : live_attachments) w.bytes(a);
    auto log = live_log();
    w.u32(static_cast<std::uint32_t>(log.size()));
    for (const auto& e : log) w.raw(encode_log_entry(e));
    recs.push_back(std::move(w).take());
    for (const auto& [uid, b] : sealed_) {
        Writer s;
        s.u8(static_cast<std::uint8_t>(JournalKind::Sealed));
        s.bytes(encode(b));
        recs.push_back(std::move(s).take());
    }
    disk_.replace(kJournal, std::move(recs));
}

void VolumeManager::sync_exchange(LocalLogEntry e)
{
    Key k = key_of(e);
    RequestSingle r = to_request(e.entry, e.uid);
    Digest pd = payload_digest(r);
    SignedRequest sr{r, sign(e.uid, pd)};
    GrantSingle g;
    try {
        g = env_.call(actor_, ss_.name(), "signed", [&] { return ss_.handle_signed(sr, e.data ? ByteView(*e.data) : ByteView()); });
    } catch (const Error& x) {
        if (x.code() == Errc::Replay) {
            try {
                if (sink_ && call_sink("has_grant", [&] { return sink_->has_grant(pd); })) release({k});
            } catch (const Error& y) {
                if (y.code() != Errc::Unreachable) throw;
            }
            return;
        }
        if (x.code() == Errc::Unreachable) return;
        drop_entry(k, x.what());
        return;
    }
    if (g.inner != r || !verify_server(payload_digest(g), g.sig)) {
        VmEvent ev;
        ev.kind = VmEvent::Kind::BadGrant;
        ev.uid = e.uid;
        ev.blknum = e.entry.blknum;
        ev.ino = e.entry.ino;
        ev.reason = "grant does not echo the request or is badly signed";
        record(std::move(ev));
        return;
    }
    if (sink_) {
        try {
            call_sink("persist_grant", [&] { sink_->persist_grant_single(sr, g); });
        } catch (const Error& x) {
            if (x.code() == Errc::Unreachable) return;
            throw;
        }
    }
    release({k});
}

RequestBatch VolumeManager::build_batch(PrincipalId uid, const std::vector<BatchEntry>& entries)
{
    RequestBatch b;
    b.header = BatchHeader{uid, static_cast<std::uint32_t>(entries.size())};
    b.entries = entries;
    b.sig = sign(uid, payload_digest(b));
    return b;
}

void VolumeManager::unseal(PrincipalId uid)
{
    auto it = sealed_.find(uid);
    if (it == sealed_.end()) return;
    std::vector<BatchEntry> back;
    for (const auto& e : it->second.entries)
        if (live_.count(Key{uid, e.nonce, e.count})) back.push_back(e);
    Writer w;
    w.u8(static_cast<std::uint8_t>(JournalKind::Unseal));
    w.u32(uid);
    put_digest(w, payload_digest(it->second));
    disk_.append(kJournal, std::move(w).take());
    sealed_.erase(it);
    auto& p = pending_[uid];
    if (p.entries.empty()) p.first_at = env_.now();
    p.entries.insert(p.entries.begin(), back.begin(), back.end());
}

VolumeManager::Outcome VolumeManager::exchange(const RequestBatch& batch, bool resent, bool full_data)
{
    const PrincipalId uid = batch.header.uid;
    if (!resent) {
        Writer w;
        w.u8(static_cast<std::uint8_t>(JournalKind::Sealed));
        w.bytes(encode(batch));
        disk_.append(kJournal, std::move(w).take());
        env_.point(actor_, "vm.flush.sealed");
    }
    std::map<Digest, Bytes> data;
    for (const auto& e : batch.entries) {
        if (e.op != OpKind::Store) continue;
        auto it = live_.find(Key{uid, e.nonce, e.count});
        if (it != live_.end() && it->second.log.data && (full_data || !it->second.acked))
            data.emplace(e.blknum, *it->second.log.data);
    }

    GrantBatch g;
    try {
        g = env_.call(actor_, ss_.name(), "grant", [&] { return ss_.verify_and_grant(batch, data); });
    } catch (const Error& x) {
        if (x.code() != Errc::Reject) return Outcome::Failed;
        auto info = ss_.last_reject();
        if (info && info->entry_index && *info->entry_index < batch.entries.size()) {
            const BatchEntry& e = batch.entries[*info->entry_index];
            if (!full_data && info->reason.find("no data") != std::string::npos) {
                want_full_ = true;
                return Outcome::Rejected;
            }
            drop_entry(Key{uid, e.nonce, e.count}, info->reason);
            return Outcome::Rejected;
        }
        VmEvent ev;
        ev.kind = VmEvent::Kind::GrantRefused;
        ev.uid = uid;
        ev.reason = x.what();
        ev.request = batch;
        record(std::move(ev));
        return Outcome::Failed;
    }
    env_.point(actor_, "vm.flush.granted");

    if (encode(g.inner) != encode(batch) || !verify_server(payload_digest(g), g.sig)) {
        VmEvent ev;
        ev.kind = VmEvent::Kind::BadGrant;
        ev.uid = uid;
        ev.reason = "grant does not echo the batch or is badly signed";
        ev.request = batch;
        record(std::move(ev));
        return Outcome::Failed;
    }
    env_.point(actor_, "vm.flush.verified");

    if (sink_) {
        try {
            call_sink("persist_grant", [&] { sink_->persist_grant(uid, g); });
        } catch (const Error& x) {
            if (x.code() == Errc::Unreachable) return Outcome::Failed;
            throw;
        }
    }
    env_.point(actor_, "vm.flush.persisted");

    std::vector<Key> keys;
    for (const auto& e : batch.entries) keys.push_back(Key{uid, e.nonce, e.count});
    release(keys);
    env_.point(actor_, "vm.flush.released");
    grants_.push_back(std::move(g));
    return Outcome::Granted;
}

std::optional<GrantBatch> VolumeManager::flush_batch(PrincipalId uid)
{
    if (config_.mode != SignMode::Async) return std::nullopt;
    std::optional<GrantBatch> last;
    bool full = false;
    env_.point(actor_, "vm.flush.begin");
    for (int attempt = 0; attempt < 8; ++attempt) {
        want_full_ = false;
        Outcome out;
        auto sit = sealed_.find(uid);
        if (sit != sealed_.end()) {
            out = exchange(sit->second, true, full);
        } else {
            auto& p = pending_[uid];
            auto& v = p.entries;
            v.erase(std::remove_if(v.begin(), v.end(),
                                   [&](const BatchEntry& b) { return !live_.count(Key{uid, b.nonce, b.count}); }),
                    v.end());
            if (v.empty()) break;
            RequestBatch b = build_batch(uid, v);
            v.clear();
            ++counters_.flushes;
            sealed_[uid] = b;
            out = exchange(b, false, full);
        }
        if (out == Outcome::Granted) {
            last = grants_.back();
            sealed_.erase(uid);
            continue;
        }
        if (out == Outcome::Failed) break;
        if (want_full_) full = true;
        unseal(uid);
        ++counters_.retries;
    }
    return last;
}

void VolumeManager::flush_all()
{
    std::set<PrincipalId> uids;
    for (const auto& [uid, p] : pending_)
        if (!p.entries.empty()) uids.insert(uid);
    for (const auto& [uid, b] : sealed_) uids.insert(uid);
    for (PrincipalId uid : uids) flush_batch(uid);
}

void VolumeManager::maybe_flush(PrincipalId uid)
{
    if (config_.mode != SignMode::Async) return;
    auto it = pending_.find(uid);
    if (it == pending_.end() || it->second.entries.size() < config_.threshold) return;
    ++counters_.threshold_flushes;
    flush_batch(uid);
}

void VolumeManager::on_timer()
{
    if (config_.mode != SignMode::Async) return;
    std::set<PrincipalId> due;
    for (const auto& [uid, p] : pending_)
        if (!p.entries.empty() && env_.now() - p.first_at >= config_.timeout) due.insert(uid);
    for (const auto& [uid, b] : sealed_) due.insert(uid);
    for (PrincipalId uid : due) {
        ++counters_.timeout_flushes;
        flush_batch(uid);
    }
}

ReplayReport VolumeManager::vm_recover()
{
    ReplayReport rep;
    sessions_.clear();
    std::map<Key, LocalLogEntry> before;
    for (const auto& [k, le] : live_) before.emplace(k, le.log);

    for (auto it = sealed_.begin(); it != sealed_.end();) {
        bool granted = false;
        if (sink_) {
            Digest pd = payload_digest(it->second);
            try {
                granted = call_sink("has_grant", [&] { return sink_->has_grant(pd); });
            } catch (const Error& x) {
                if (x.code() != Errc::Unreachable) throw;
            }
        }
        if (granted) {
            std::vector<Key> keys;
            for (const auto& e : it->second.entries) keys.push_back(Key{it->first, e.nonce, e.count});
            release(keys);
            it = sealed_.erase(it);
        } else {
            ++rep.resent_batches;
            ++it;
        }
    }

    for (const auto& le : live_log()) {
        rep.retransmitted.push_back(le);
        ++counters_.retransmits;
        if (config_.mode == SignMode::Sync)
            sync_exchange(le);
        else
            send(le);
    }
    env_.drain();
    flush_all();

    for (const auto& [k, le] : before)
        if (!live_.count(k)) rep.acknowledged.push_back(le);
    env_.trace(actor_, "vm-recover",
               "retransmitted=" + std::to_string(rep.retransmitted.size()) +
                   " resent_batches=" + std::to_string(rep.resent_batches));
    return rep;
}

std::size_t VolumeManager::pending_entries() const
{
    std::size_t n = 0;
    for (const auto& [uid, p] : pending_) n += p.entries.size();
    for (const auto& [uid, b] : sealed_) n += b.entries.size();
    return n;
}

std::vector<LocalLogEntry> VolumeManager::live_log() const
{
    std::vector<const LiveEntry*> v;
    for (const auto& [k, le] : live_) v.push_back(&le);
    std::sort(v.begin(), v.end(), [](const LiveEntry* a, const LiveEntry* b) { return a->order < b->order; });
    std::vector<LocalLogEntry> out;
    for (const auto* le : v) out.push_back(le->log);
    return out;
}

std::size_t VolumeManager::journal_records() const
{
    return disk_.records(kJournal).size();
}

}  // namespace safius
