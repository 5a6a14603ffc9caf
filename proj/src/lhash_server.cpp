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


#include "safius/lhash_server.hpp"

#include <algorithm>

namespace safius {

namespace {

constexpr const char* kWal = "wal";
constexpr std::uint8_t kWalMsg = 1;
constexpr std::uint8_t kWalCommit = 2;
constexpr std::uint8_t kCkptTag = 0x43;
constexpr std::size_t kRecordSize = 64;
constexpr std::size_t kRecordsPerPage = 64;

std::string ino_key(InodeNumber ino)
{
    Writer w;
    w.u64(ino.pack());
    return to_hex(w.data());
}

Bytes fgrp_key(InodeNumber ino)
{
    Writer w;
    w.u64(ino.pack());
    return std::move(w).take();
}

Bytes encode_record(InodeNumber ino, const Idata& d)
{
    Bytes rec(kRecordSize, 0);
    Writer w;
    w.u64(ino.pack());
    w.u8(static_cast<std::uint8_t>(d.inode_hash.size()));
    w.raw(d.inode_hash.view());
    Bytes head = std::move(w).take();
    std::copy(head.begin(), head.end(), rec.begin());
    Writer inc;
    inc.u64(d.incarnation);
    std::copy(inc.data().begin(), inc.data().end(), rec.begin() + 8 + 1 + 32);
    return rec;
}

std::optional<std::pair<InodeNumber, Idata>> decode_record(ByteView rec)
{
    Reader r(rec);
    InodeNumber ino = InodeNumber::unpack(r.u64("itbl.ino"));
    std::uint8_t len = r.u8("itbl.hashlen");
    if (len == 0) return std::nullopt;
    if (len > 32) r.fail("itbl.hashlen", "too long");
    Bytes h = r.raw(len, "itbl.hash");
    r.raw(32 - len, "itbl.pad");
    Idata d;
    d.inode_hash = Digest(h);
    d.incarnation = r.u64("itbl.incarnation");
    return std::make_pair(ino, d);
}

}  // namespace

const char* lock_mode_name(LockMode m)
{
    return m == LockMode::Shared ? "shared" : "exclusive";
}

LhashServer::LhashServer(Env& env, const KeyRegistry& keys, StorageServer& ss, StableStorage& disk,
                         FgrpKeyring system_keys, LhashConfig config, std::uint64_t seed, std::string name)
    : env_(env),
      keys_(keys),
      ss_(ss),
      disk_(disk),
      system_keys_(std::move(system_keys)),
      config_(config),
      seed_(seed),
      name_(std::move(name))
{
    load();
}

LhashServer::~LhashServer() = default;

void LhashServer::restart()
{
    vm_.reset();
    locks_.clear();
    itbl_.clear();
    txmem_.clear();
    itbl_root_.reset();
    itbl_blocks_.clear();
    ckpt_seq_ = wal_seq_ = commits_since_ckpt_ = 0;
    freed_.clear();
    fgrp_tree_ = MerkleMap();
    fgrp_defs_.clear();
    fgrp_incarnation_ = 0;
    vault_batches_.clear();
    vault_singles_.clear();
    granted_.clear();
    tree_ = RefcntTree();
    agreed_leaves_.clear();
    signed_root_.reset();
    env_.set_down(name_, false);
    load();
    env_.trace(name_, "restart", "itbl=" + std::to_string(itbl_.size()));
}

void LhashServer::load()
{
    load_fgrp();
    for (const auto& k : disk_.keys_with_prefix("lock.")) {
        Bytes raw_key = from_hex(k.substr(5));
        Reader key_r(raw_key);
        InodeNumber ino = InodeNumber::unpack(key_r.u64("lock.ino"));
        auto v = disk_.get(k);
        Reader r(*v);
        std::uint32_t n = r.u32("lock.n");
        auto& s = locks_[ino];
        for (std::uint32_t i = 0; i < n; ++i) {
            FsId fs = r.u16("lock.fs");
            s.holders[fs] = static_cast<LockMode>(r.u8("lock.mode"));
        }
    }
    load_vault();
    vm_ = std::make_unique<VolumeManager>(env_, name_, disk_, keys_, system_keys_, ss_, this, config_.vm, seed_, name_);
    vm_->vm_recover();
    load_itbl();
    replay_wal();
}

// ---- filegroups

void LhashServer::load_fgrp()
{
    auto v = disk_.get("fgrp.state");
    if (!v) {
        fgrp_defs_[0] = FgrpDef{{kLhashPrincipal}, {kLhashPrincipal}};
        Writer w;
        w.u32(0);
        fgrp_tree_.put(fgrp_key(kItblIno), std::move(w).take());
        save_fgrp();
        return;
    }
    Reader r(*v);
    fgrp_incarnation_ = r.u64("fgrp.incarnation");
    std::uint32_t nd = r.u32("fgrp.defs");
    for (std::uint32_t i = 0; i < nd; ++i) {
        FgrpId id = r.u32("fgrp.id");
        FgrpDef d;
        std::uint32_t nw = r.u32("fgrp.writers");
        for (std::uint32_t j = 0; j < nw; ++j) d.writers.insert(r.u32("fgrp.writer"));
        std::uint32_t nr = r.u32("fgrp.readers");
        for (std::uint32_t j = 0; j < nr; ++j) d.readers.insert(r.u32("fgrp.reader"));
        fgrp_defs_[id] = std::move(d);
    }
    std::uint32_t na = r.u32("fgrp.assignments");
    for (std::uint32_t i = 0; i < na; ++i) {
        Bytes k = r.raw(8, "fgrp.ino");
        Bytes val = r.bytes("fgrp.value");
        fgrp_tree_.put(k, std::move(val));
    }
    r.expect_done("fgrp state");
}

void LhashServer::save_fgrp()
{
    Writer w;
    w.u64(fgrp_incarnation_);
    w.u32(static_cast<std::uint32_t>(fgrp_defs_.size()));
    for (const auto& [id, d] : fgrp_defs_) {
        w.u32(id);
        w.u32(static_cast<std::uint32_t>(d.writers.size()));
        for (auto p : d.writers) w.u32(p);
        w.u32(static_cast<std::uint32_t>(d.readers.size()));
        for (auto p : d.readers) w.u32(p);
    }
    w.u32(static_cast<std::uint32_t>(fgrp_tree_.size()));
    for (const auto& [k, v] : fgrp_tree_.entries()) {
        w.raw(k);
        w.bytes(v);
    }
    disk_.put("fgrp.state", std::move(w).take());
}

void LhashServer::bump_fgrp()
{
    ++fgrp_incarnation_;
    save_fgrp();
    env_.trace(name_, "fgrp", "incarnation=" + std::to_string(fgrp_incarnation_) + " hash=" + current_fgrphash().short_hex());
}

void LhashServer::fgrp_define(FgrpId fgrp, std::set<PrincipalId> writers, std::set<PrincipalId> readers)
{
    fgrp_defs_[fgrp] = FgrpDef{std::move(writers), std::move(readers)};
    bump_fgrp();
}

void LhashServer::fgrp_assign(InodeNumber ino, FgrpId fgrp)
{
    if (!fgrp_defs_.count(fgrp)) raise(Errc::InvalidArgument, "undefined filegroup " + std::to_string(fgrp));
    Writer w;
    w.u32(fgrp);
    fgrp_tree_.put(fgrp_key(ino), std::move(w).take());
    bump_fgrp();
}

void LhashServer::fgrp_register(PrincipalId uid, InodeNumber ino, FgrpId fgrp)
{
    if (uid != ino.owner_uid) raise(Errc::PermissionDenied, "only the owner may register " + ino.str());
    if (auto g = fgrp_defs_.find(fgrp); g != fgrp_defs_.end() && !g->second.writers.count(uid))
        raise(Errc::PermissionDenied, "uid " + std::to_string(uid) + " is not a writer of filegroup " + std::to_string(fgrp));
    if (auto d = idata(ino); d && d->exists()) raise(Errc::Exists, ino.str() + " already in the i-tbl");
    fgrp_assign(ino, fgrp);
}

void LhashServer::fgrp_update(PrincipalId uid, InodeNumber ino, FgrpId fgrp)
{
    auto d = idata(ino);
    if (!d || !d->exists()) raise(Errc::UnknownInode, ino.str());
    if (uid != ino.owner_uid) raise(Errc::PermissionDenied, "only the owner may change the filegroup of " + ino.str());
    if (auto g = fgrp_defs_.find(fgrp); g != fgrp_defs_.end() && !g->second.writers.count(uid))
        raise(Errc::PermissionDenied, "uid " + std::to_string(uid) + " is not a writer of filegroup " + std::to_string(fgrp));
    fgrp_assign(ino, fgrp);
}

std::optional<FgrpId> LhashServer::fgrp_lookup(InodeNumber ino) const
{
    const Bytes* v = fgrp_tree_.find(fgrp_key(ino));
    if (!v) return std::nullopt;
    Reader r(*v);
    return r.u32("fgrp.value");
}

Digest LhashServer::current_fgrphash() const
{
    Writer w;
    w.raw(fgrp_tree_.root().view());
    w.u64(fgrp_incarnation_);
    return digest(w.data());
}

std::optional<FgrpRecord> LhashServer::fgrp_record(InodeNumber ino) const
{
    auto id = fgrp_lookup(ino);
    if (!id) return std::nullopt;
    FgrpRecord rec;
    rec.fgrp = *id;
    rec.incarnation = fgrp_incarnation_;
    if (auto it = fgrp_defs_.find(*id); it != fgrp_defs_.end()) {
        rec.writers = it->second.writers;
        rec.readers = it->second.readers;
    }
    return rec;
}

bool LhashServer::may_update(PrincipalId uid, InodeNumber ino) const
{
    if (uid == ino.owner_uid) return true;
    auto rec = fgrp_record(ino);
    return rec && rec->writers.count(uid);
}

bool LhashServer::may_access(PrincipalId uid, InodeNumber ino, LockMode mode) const
{
    if (may_update(uid, ino)) return true;
    if (mode == LockMode::Exclusive) return false;
    auto rec = fgrp_record(ino);
    return rec && rec->readers.count(uid);
}

// ---- locks

void LhashServer::register_client(FsId fs, std::string actor, LockClient* client)
{
    clients_[fs] = Client{std::move(actor), client};
}

std::optional<LockMode> LhashServer::held(FsId fs, InodeNumber ino) const
{
    auto it = locks_.find(ino);
    if (it == locks_.end()) return std::nullopt;
    auto h = it->second.holders.find(fs);
    if (h == it->second.holders.end()) return std::nullopt;
    return h->second;
}

bool LhashServer::compatible(const LockState& s, FsId fs, LockMode mode) const
{
    for (const auto& [h, m] : s.holders) {
        if (h == fs) continue;
        if (mode == LockMode::Exclusive || m == LockMode::Exclusive) return false;
    }
    return true;
}

void LhashServer::save_lock(InodeNumber ino)
{
    auto it = locks_.find(ino);
    std::string key = "lock." + ino_key(ino);
    if (it == locks_.end() || it->second.holders.empty()) {
        disk_.erase(key);
        if (it != locks_.end() && it->second.waiters.empty()) locks_.erase(it);
        return;
    }
    Writer w;
    w.u32(static_cast<std::uint32_t>(it->second.holders.size()));
    for (const auto& [fs, m] : it->second.holders) {
        w.u16(fs);
        w.u8(static_cast<std::uint8_t>(m));
    }
    disk_.put(key, std::move(w).take());
}

void LhashServer::notify_revoke(FsId holder, InodeNumber ino, LockMode wanted)
{
    auto c = clients_.find(holder);
    if (c == clients_.end()) return;
    ++stats_.callbacks;
    LockClient* client = c->second.client;
    env_.post(name_, c->second.actor, "revoke", [client, ino, wanted] { client->on_revoke(ino, wanted); });
}

LockGrant LhashServer::acquire_lock(FsId fs, PrincipalId uid, InodeNumber ino, LockMode mode)
{
    if (!may_access(uid, ino, mode))
        raise(Errc::PermissionDenied, "uid " + std::to_string(uid) + " may not lock " + ino.str() + " " + lock_mode_name(mode));
    auto cur = idata(ino).value_or(Idata{});
    auto& s = locks_[ino];
    if (auto h = s.holders.find(fs); h != s.holders.end() && (h->second == LockMode::Exclusive || mode == LockMode::Shared))
        return LockGrant{true, cur};
    // An upgrading holder goes ahead of the queue; otherwise waiters are FIFO.
    if (compatible(s, fs, mode) && (s.waiters.empty() || s.holders.count(fs))) {
        s.holders[fs] = mode;
        save_lock(ino);
        env_.trace(name_, "lock", ino.str() + " " + lock_mode_name(mode) + " fs" + std::to_string(fs));
        return LockGrant{true, cur};
    }
    bool queued = false;
    for (auto& w : s.waiters) {
        if (w.fs != fs) continue;
        if (mode == LockMode::Exclusive) w.mode = mode;
        queued = true;
    }
    if (!queued) s.waiters.push_back(LockState::Waiter{fs, mode, env_.now()});
    env_.trace(name_, "lock-wait", ino.str() + " " + lock_mode_name(mode) + " fs" + std::to_string(fs));
    std::vector<FsId> conflicting;
    for (const auto& [h, m] : s.holders)
        if (h != fs && (mode == LockMode::Exclusive || m == LockMode::Exclusive)) conflicting.push_back(h);
    // Callbacks may re-enter and change the table; `s` is not used past here.
    for (FsId h : conflicting) notify_revoke(h, ino, mode);
    return LockGrant{false, {}};
}

void LhashServer::release_lock(FsId fs, InodeNumber ino)
{
    auto it = locks_.find(ino);
    if (it == locks_.end() || !it->second.holders.erase(fs)) return;
    env_.trace(name_, "unlock", ino.str() + " fs" + std::to_string(fs));
    grant_waiters(ino);
}

void LhashServer::downgrade_lock(FsId fs, InodeNumber ino)
{
    auto it = locks_.find(ino);
    if (it == locks_.end()) return;
    auto h = it->second.holders.find(fs);
    if (h == it->second.holders.end() || h->second == LockMode::Shared) return;
    h->second = LockMode::Shared;
    env_.trace(name_, "downgrade", ino.str() + " fs" + std::to_string(fs));
    grant_waiters(ino);
}

void LhashServer::grant_waiters(InodeNumber ino)
{
    auto it = locks_.find(ino);
    if (it == locks_.end()) return;
    auto& s = it->second;
    Idata cur = idata(ino).value_or(Idata{});
    while (!s.waiters.empty()) {
        auto w = s.waiters.front();
        if (!compatible(s, w.fs, w.mode)) break;
        s.waiters.pop_front();
        s.holders[w.fs] = w.mode;
        env_.trace(name_, "lock", ino.str() + " " + lock_mode_name(w.mode) + " fs" + std::to_string(w.fs));
        if (auto c = clients_.find(w.fs); c != clients_.end()) {
            LockClient* client = c->second.client;
            LockMode mode = w.mode;
            env_.post(name_, c->second.actor, "granted", [client, ino, mode, cur] { client->on_lock_granted(ino, mode, cur); });
        }
    }
    save_lock(ino);
}

void LhashServer::tick()
{
    std::vector<InodeNumber> touched;
    for (auto& [ino, s] : locks_) {
        for (auto w = s.waiters.begin(); w != s.waiters.end();) {
            if (env_.now() - w->since < config_.deadlock_timeout) {
                ++w;
                continue;
            }
            env_.trace(name_, "lock-timeout", ino.str() + " fs" + std::to_string(w->fs));
            if (auto c = clients_.find(w->fs); c != clients_.end()) {
                LockClient* client = c->second.client;
                InodeNumber i = ino;
                env_.post(name_, c->second.actor, "denied", [client, i] { client->on_lock_denied(i, Errc::DeadlockTimeout); });
            }
            w = s.waiters.erase(w);
            touched.push_back(ino);
        }
    }
    for (auto ino : touched) grant_waiters(ino);
    if (config_.checkpoint_every && commits_since_ckpt_ >= config_.checkpoint_every) checkpoint();
}

// ---- i-tbl

std::optional<Idata> LhashServer::idata(InodeNumber ino) const
{
    auto it = itbl_.find(ino);
    if (it == itbl_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t LhashServer::last_txid(FsId fs) const
{
    auto it = txmem_.find(fs);
    return it == txmem_.end() ? 0 : it->second;
}

std::uint64_t LhashServer::store_inode_data(FsId fs, PrincipalId uid, const StoreInodeDataMsg& msg)
{
    env_.point(name_, "lhash.sid.begin");
    std::uint64_t last = last_txid(fs);
    if (msg.txid <= last) {
        ++stats_.replays;
        env_.trace(name_, "sid-replay", "fs" + std::to_string(fs) + " txid=" + std::to_string(msg.txid));
        return msg.txid;
    }
    if (msg.txid != last + 1)
        raise(Errc::StaleTxid, "txid " + std::to_string(msg.txid) + " after " + std::to_string(last));
    StoreInodeDataMsg finals;
    finals.txid = msg.txid;
    std::map<InodeNumber, Idata> running;
    for (const auto& [ino, d] : msg.pairs) {
        if (held(fs, ino) != LockMode::Exclusive) raise(Errc::LockNotHeld, ino.str());
        if (!may_update(uid, ino)) raise(Errc::PermissionDenied, "uid " + std::to_string(uid) + " may not update " + ino.str());
        Idata prev = running.count(ino) ? running[ino] : idata(ino).value_or(Idata{});
        Idata next{d.inode_hash, prev.incarnation + 1};
        running[ino] = next;
        finals.pairs.emplace_back(ino, next);
    }
    std::uint64_t seq = ++wal_seq_;
    Writer w;
    w.u8(kWalMsg);
    w.u64(seq);
    w.u16(fs);
    w.bytes(encode(finals));
    disk_.append(kWal, std::move(w).take());
    env_.point(name_, "lhash.sid.logged");
    Writer c;
    c.u8(kWalCommit);
    c.u64(seq);
    disk_.append(kWal, std::move(c).take());
    env_.point(name_, "lhash.sid.committed");
    apply_commit(fs, seq, finals);
    env_.point(name_, "lhash.sid.applied");
    return msg.txid;
}

void LhashServer::apply_commit(FsId fs, std::uint64_t seq, const StoreInodeDataMsg& finals)
{
    for (const auto& [ino, d] : finals.pairs) {
        itbl_[ino] = d;
        if (!d.exists() && ino.node_id != fs) freed_[ino.node_id].insert(ino);
    }
    txmem_[fs] = finals.txid;
    ++stats_.commits;
    ++commits_since_ckpt_;
    (void)seq;
    env_.trace(name_, "sid-commit", "fs" + std::to_string(fs) + " txid=" + std::to_string(finals.txid) +
                                        " pairs=" + std::to_string(finals.pairs.size()));
}

void LhashServer::replay_wal()
{
    std::map<std::uint64_t, std::pair<FsId, StoreInodeDataMsg>> msgs;
    std::uint64_t ack_floor = 0;
    for (const Bytes& rec : disk_.records(kWal)) {
        Reader r(rec);
        std::uint8_t kind = r.u8("wal.kind");
        std::uint64_t seq = r.u64("wal.seq");
        wal_seq_ = std::max(wal_seq_, seq);
        if (kind == kWalMsg) {
            FsId fs = r.u16("wal.fs");
            msgs[seq] = {fs, decode<StoreInodeDataMsg>(r.bytes("wal.msg"))};
        } else if (kind == kWalCommit) {
            auto it = msgs.find(seq);
            if (it != msgs.end() && seq > ckpt_seq_) apply_commit(it->second.first, seq, it->second.second);
        } else {
            r.fail("wal.kind", "unknown record kind");
        }
    }
    (void)ack_floor;
    wal_seq_ = std::max(wal_seq_, ckpt_seq_);
    for (auto& [fs, set] : freed_) {
        auto v = disk_.get("freed.ack." + std::to_string(fs));
        if (!v) continue;
        Reader r(*v);
        std::uint32_t n = r.u32("freed.n");
        for (std::uint32_t i = 0; i < n; ++i) set.erase(InodeNumber::unpack(r.u64("freed.ino")));
    }
}

std::vector<InodeNumber> LhashServer::freed_inode_list(FsId fs)
{
    std::vector<InodeNumber> out;
    auto it = freed_.find(fs);
    if (it == freed_.end() || it->second.empty()) return out;
    out.assign(it->second.begin(), it->second.end());
    // Remember what was delivered so a replayed log does not deliver it twice.
    std::set<InodeNumber> acked;
    if (auto v = disk_.get("freed.ack." + std::to_string(fs))) {
        Reader r(*v);
        std::uint32_t n = r.u32("freed.n");
        for (std::uint32_t i = 0; i < n; ++i) acked.insert(InodeNumber::unpack(r.u64("freed.ino")));
    }
    acked.insert(out.begin(), out.end());
    Writer w;
    w.u32(static_cast<std::uint32_t>(acked.size()));
    for (auto i : acked) w.u64(i.pack());
    disk_.put("freed.ack." + std::to_string(fs), std::move(w).take());
    it->second.clear();
    env_.trace(name_, "freed-list", "fs" + std::to_string(fs) + " n=" + std::to_string(out.size()));
    return out;
}

void LhashServer::load_itbl()
{
    std::optional<Bytes> last;
    for (const auto& a : vm_->attachments())
        if (!a.empty() && a[0] == kCkptTag) last = a;
    if (!last) return;
    Reader r(*last);
    r.u8("ckpt.tag");
    ckpt_seq_ = r.u64("ckpt.seq");
    itbl_root_ = get_idata(r, "ckpt.root");
    std::uint32_t ntx = r.u32("ckpt.txmem");
    for (std::uint32_t i = 0; i < ntx; ++i) {
        FsId fs = r.u16("ckpt.fs");
        txmem_[fs] = r.u64("ckpt.txid");
    }
    std::uint32_t nf = r.u32("ckpt.freed");
    for (std::uint32_t i = 0; i < nf; ++i) {
        FsId fs = r.u16("ckpt.freed.fs");
        freed_[fs].insert(InodeNumber::unpack(r.u64("ckpt.freed.ino")));
    }
    r.expect_done("checkpoint record");

    Bytes index = vm_->vm_read(itbl_root_->inode_hash, 0);
    Reader ir(index);
    std::uint32_t np = ir.u32("itbl.pages");
    itbl_blocks_ = {itbl_root_->inode_hash};
    for (std::uint32_t i = 0; i < np; ++i) {
        Digest page_id = get_digest(ir, "itbl.page");
        itbl_blocks_.push_back(page_id);
        Bytes page = vm_->vm_read(page_id, 0);
        for (std::size_t off = 0; off + kRecordSize <= page.size(); off += kRecordSize) {
            auto rec = decode_record(ByteView(page).subspan(off, kRecordSize));
            if (rec) itbl_[rec->first] = rec->second;
        }
    }
}

void LhashServer::checkpoint()
{
    env_.point(name_, "lhash.ckpt.begin");
    std::vector<Bytes> pages;
    Bytes page;
    for (const auto& [ino, d] : itbl_) {
        Bytes rec = encode_record(ino, d);
        page.insert(page.end(), rec.begin(), rec.end());
        if (page.size() == kRecordSize * kRecordsPerPage) pages.push_back(std::move(page)), page.clear();
    }
    if (!page.empty()) {
        page.resize(kRecordSize * kRecordsPerPage, 0);
        pages.push_back(std::move(page));
    }
    std::vector<VolumeManager::WriteReq> writes;
    Writer index;
    index.u32(static_cast<std::uint32_t>(pages.size()));
    for (auto& p : pages) {
        put_digest(index, digest(vm_->seal(p, 0)));
        writes.push_back(VolumeManager::WriteReq{std::move(p), kItblIno, kLhashPrincipal, 0});
    }
    Bytes index_bytes = std::move(index).take();
    Digest index_id = digest(vm_->seal(index_bytes, 0));
    writes.insert(writes.begin(), VolumeManager::WriteReq{std::move(index_bytes), kItblIno, kLhashPrincipal, 0});

    std::vector<VolumeManager::FreeReq> frees;
    for (const auto& b : itbl_blocks_) frees.push_back(VolumeManager::FreeReq{b, kItblIno, kLhashPrincipal});

    Idata root{index_id, (itbl_root_ ? itbl_root_->incarnation : 0) + 1};
    Writer ck;
    ck.u8(kCkptTag);
    ck.u64(wal_seq_);
    put_idata(ck, root);
    ck.u32(static_cast<std::uint32_t>(txmem_.size()));
    for (const auto& [fs, t] : txmem_) {
        ck.u16(fs);
        ck.u64(t);
    }
    std::uint32_t nf = 0;
    for (const auto& [fs, set] : freed_) nf += static_cast<std::uint32_t>(set.size());
    ck.u32(nf);
    for (const auto& [fs, set] : freed_)
        for (auto i : set) {
            ck.u16(fs);
            ck.u64(i.pack());
        }
    Bytes ck_rec = std::move(ck).take();
    auto ids = vm_->write_group(writes, frees, {ck_rec});
    env_.point(name_, "lhash.ckpt.logged");

    itbl_root_ = root;
    itbl_blocks_ = ids;
    ckpt_seq_ = wal_seq_;
    commits_since_ckpt_ = 0;
    disk_.replace(kWal, {});
    env_.point(name_, "lhash.ckpt.truncated");
    vm_->flush_all();
    vm_->compact({ck_rec});
    ++stats_.checkpoints;
    env_.trace(name_, "checkpoint", "root=" + root.inode_hash.short_hex() + " entries=" + std::to_string(itbl_.size()));
}

// ---- signature vault

bool LhashServer::verify(PrincipalId who, const Digest& d, const Signature& s)
{
    ++stats_.verify_calls;
    env_.charge_verify();
    return s.signer == who && keys_.contains(who) && keys_.verify(who, d, s);
}

void LhashServer::apply_tree(const BatchEntry& e)
{
    tree_.apply(e.blknum, e.ino.owner_uid, e.op == OpKind::Store ? 1 : -1);
}

void LhashServer::persist_grant(PrincipalId uid, const GrantBatch& g)
{
    Digest pd = payload_digest(g.inner);
    if (granted_.count(pd)) return;
    if (!verify(kStorageServerPrincipal, payload_digest(g), g.sig))
        raise(Errc::BadSignature, "grant not signed by the storage server");
    if (g.inner.header.uid != uid || !verify(uid, pd, g.inner.sig))
        raise(Errc::BadSignature, "batch not signed by uid " + std::to_string(uid));
    disk_.put("vault.b." + pd.hex(), encode(g));
    vault_batches_.emplace(pd, g);
    granted_.insert(pd);
    for (const auto& e : g.inner.entries) apply_tree(e);
    ++stats_.grants_persisted;
}

void LhashServer::persist_grant_single(const SignedRequest& req, const GrantSingle& g)
{
    Digest pd = payload_digest(req.req);
    if (granted_.count(pd)) return;
    if (!verify(kStorageServerPrincipal, payload_digest(g), g.sig) || g.inner != req.req)
        raise(Errc::BadSignature, "grant not signed by the storage server");
    if (!verify(req.req.uid, pd, req.sig)) raise(Errc::BadSignature, "request not signed by uid " + std::to_string(req.req.uid));
    Writer w;
    w.bytes(encode(req));
    w.bytes(encode(g));
    disk_.put("vault.s." + pd.hex(), std::move(w).take());
    vault_singles_.emplace(pd, std::make_pair(req, g));
    granted_.insert(pd);
    apply_tree(to_entry(req.req));
    ++stats_.grants_persisted;
}

bool LhashServer::has_grant(const Digest& request_payload) const
{
    return granted_.count(request_payload) != 0;
}

std::vector<GrantBatch> LhashServer::vault_batches() const
{
    std::vector<GrantBatch> out;
    for (const auto& [pd, g] : vault_batches_) out.push_back(g);
    return out;
}

std::vector<std::pair<SignedRequest, GrantSingle>> LhashServer::vault_singles() const
{
    std::vector<std::pair<SignedRequest, GrantSingle>> out;
    for (const auto& [pd, g] : vault_singles_) out.push_back(g);
    return out;
}

std::size_t LhashServer::evidence_size() const
{
    return vault_records() + agreed_leaves_.size() + (signed_root_ ? 1 : 0);
}

namespace {

Bytes encode_prune_state(const std::optional<SignedRoot>& root, const std::map<Digest, UidCounts>& leaves,
                         const std::vector<Digest>& covered)
{
    Writer w;
    w.u8(root ? 1 : 0);
    if (root) w.bytes(encode(*root));
    w.u32(static_cast<std::uint32_t>(leaves.size()));
    for (const auto& [blk, c] : leaves) {
        put_digest(w, blk);
        w.bytes(RefcntTree::encode_pattern(c));
    }
    w.u32(static_cast<std::uint32_t>(covered.size()));
    for (const auto& d : covered) put_digest(w, d);
    return std::move(w).take();
}

}  // namespace

void LhashServer::load_vault()
{
    std::set<Digest> covered;
    if (auto v = disk_.get("prune.state")) {
        Reader r(*v);
        if (r.u8("prune.has_root")) signed_root_ = decode<SignedRoot>(r.bytes("prune.root"));
        std::uint32_t n = r.u32("prune.leaves");
        for (std::uint32_t i = 0; i < n; ++i) {
            Digest blk = get_digest(r, "prune.blknum");
            agreed_leaves_[blk] = RefcntTree::decode_pattern(r.bytes("prune.counts"));
        }
        std::uint32_t nc = r.u32("prune.covered");
        for (std::uint32_t i = 0; i < nc; ++i) covered.insert(get_digest(r, "prune.covered"));
        r.expect_done("prune state");
    }
    for (const auto& [blk, c] : agreed_leaves_)
        for (const auto& [uid, n] : c) tree_.apply(blk, uid, n);
    granted_.insert(covered.begin(), covered.end());
    for (const auto& k : disk_.keys_with_prefix("granted.")) granted_.insert(Digest(from_hex(k.substr(8))));
    for (const auto& k : disk_.keys_with_prefix("vault.b.")) {
        Digest pd(from_hex(k.substr(8)));
        if (covered.count(pd)) continue;
        auto g = decode<GrantBatch>(*disk_.get(k));
        for (const auto& e : g.inner.entries) apply_tree(e);
        vault_batches_.emplace(pd, std::move(g));
        granted_.insert(pd);
    }
    for (const auto& k : disk_.keys_with_prefix("vault.s.")) {
        Digest pd(from_hex(k.substr(8)));
        if (covered.count(pd)) continue;
        Bytes rec = *disk_.get(k);
        Reader r(rec);
        auto req = decode<SignedRequest>(r.bytes("vault.request"));
        auto g = decode<GrantSingle>(r.bytes("vault.grant"));
        apply_tree(to_entry(req.req));
        vault_singles_.emplace(pd, std::make_pair(req, g));
        granted_.insert(pd);
    }
}

PruneResult LhashServer::lhash_prune_round()
{
    PruneResult res;
    res.evidence_before = evidence_size();
    ++stats_.prunes;
    Digest root = tree_.root();
    auto reply = env_.call(name_, ss_.name(), "prune", [&] { return ss_.server_prune_round(root, tree_); });
    if (auto* m = std::get_if<PruneMismatch>(&reply)) {
        res.mismatch = *m;
        res.evidence_after = evidence_size();
        env_.trace(name_, "prune-mismatch", m->blknum.short_hex());
        return res;
    }
    const SignedRoot& sr = std::get<SignedRoot>(reply);
    if (sr.root != root || !verify(kStorageServerPrincipal, payload_digest(sr), sr.sig)) {
        res.evidence_after = evidence_size();
        env_.trace(name_, "prune-bad-root", sr.root.short_hex());
        return res;
    }
    auto leaves = tree_.snapshot();
    std::vector<Digest> covered;
    for (const auto& [pd, g] : vault_batches_) covered.push_back(pd);
    for (const auto& [pd, g] : vault_singles_) covered.push_back(pd);
    disk_.put("prune.state", encode_prune_state(sr, leaves, covered));
    env_.point(name_, "lhash.prune.agreed");
    for (const auto& pd : covered) disk_.put("granted." + pd.hex(), {});
    for (const auto& [pd, g] : vault_batches_) disk_.erase("vault.b." + pd.hex());
    for (const auto& [pd, g] : vault_singles_) disk_.erase("vault.s." + pd.hex());
    disk_.put("prune.state", encode_prune_state(sr, leaves, {}));
    vault_batches_.clear();
    vault_singles_.clear();
    agreed_leaves_ = std::move(leaves);
    signed_root_ = sr;
    res.agreed = true;
    res.root = sr;
    res.evidence_after = evidence_size();
    env_.trace(name_, "prune-agreed", "root=" + sr.root.short_hex() + " evidence " + std::to_string(res.evidence_before) +
                                          "->" + std::to_string(res.evidence_after));
    return res;
}

}  // namespace safius
