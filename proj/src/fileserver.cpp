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


#include "safius/fileserver.hpp"

#include <algorithm>
#include <exception>

namespace safius {

namespace {

constexpr std::uint8_t kUndoTag = 'U';
constexpr std::uint8_t kDoneTag = 'D';

std::string hex_ino(InodeNumber ino)
{
    Writer w;
    w.u64(ino.pack());
    return to_hex(w.data());
}

std::vector<std::string> split_path(const std::string& path)
{
    if (path.empty() || path[0] != '/') raise(Errc::InvalidArgument, "path must be absolute: '" + path + "'");
    std::vector<std::string> out;
    std::size_t i = 1;
    while (i <= path.size()) {
        std::size_t j = path.find('/', i);
        if (j == std::string::npos) j = path.size();
        if (j > i) out.push_back(path.substr(i, j - i));
        i = j + 1;
    }
    return out;
}

}  // namespace

std::size_t indirect_fanout()
{
    return kBlockSize / digest_width();
}

Bytes encode_inode(const Inode& ino)
{
    Writer w;
    w.u8(static_cast<std::uint8_t>(ino.type));
    w.u64(ino.size);
    w.u32(ino.fgrp);
    w.u32(ino.link_count);
    for (const auto& d : ino.direct) put_digest(w, d);
    for (const auto& d : ino.indirect) put_digest(w, d);
    return std::move(w).take();
}

Inode decode_inode(ByteView b)
{
    Reader r(b);
    Inode ino;
    std::uint8_t t = r.u8("inode.type");
    if (t != 1 && t != 2) r.fail("inode.type", "unknown inode type");
    ino.type = static_cast<InodeType>(t);
    ino.size = r.u64("inode.size");
    ino.fgrp = r.u32("inode.fgrp");
    ino.link_count = r.u32("inode.link_count");
    for (auto& d : ino.direct) d = get_digest(r, "inode.direct");
    for (auto& d : ino.indirect) d = get_digest(r, "inode.indirect");
    r.expect_done("inode");
    return ino;
}

Bytes encode_dir(const std::vector<DirEntry>& entries)
{
    std::vector<DirEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const DirEntry& a, const DirEntry& b) { return a.name < b.name; });
    Writer w;
    w.u32(static_cast<std::uint32_t>(sorted.size()));
    for (const auto& e : sorted) {
        if (e.name.empty() || e.name.size() > 255) raise(Errc::InvalidArgument, "bad name length");
        w.u8(static_cast<std::uint8_t>(e.name.size()));
        w.raw(as_view(e.name));
        w.u64(e.ino.pack());
    }
    return std::move(w).take();
}

std::vector<DirEntry> decode_dir(ByteView b)
{
    std::vector<DirEntry> out;
    if (b.empty()) return out;
    Reader r(b);
    std::uint32_t n = r.u32("dir.count");
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint8_t len = r.u8("dir.name_len");
        Bytes name = r.raw(len, "dir.name");
        InodeNumber ino = InodeNumber::unpack(r.u64("dir.ino"));
        out.push_back(DirEntry{to_string(name), ino});
    }
    return out;
}

Bytes encode_undo(const UndoRecord& u)
{
    Writer w;
    w.u64(u.txid);
    w.u32(u.uid);
    w.u32(static_cast<std::uint32_t>(u.inodes.size()));
    for (const auto& i : u.inodes) {
        w.u64(i.ino.pack());
        put_idata(w, i.old_idata);
        put_digest(w, i.new_hash);
        w.u8(i.created ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(i.free_on_commit.size()));
        for (const auto& d : i.free_on_commit) put_digest(w, d);
        w.u32(static_cast<std::uint32_t>(i.free_on_abort.size()));
        for (const auto& d : i.free_on_abort) put_digest(w, d);
    }
    return std::move(w).take();
}

UndoRecord decode_undo(ByteView b)
{
    Reader r(b);
    UndoRecord u;
    u.txid = r.u64("undo.txid");
    u.uid = r.u32("undo.uid");
    std::uint32_t n = r.u32("undo.inodes");
    for (std::uint32_t k = 0; k < n; ++k) {
        UndoInode i;
        i.ino = InodeNumber::unpack(r.u64("undo.ino"));
        i.old_idata = get_idata(r, "undo.old");
        i.new_hash = get_digest(r, "undo.new");
        i.created = r.u8("undo.created") != 0;
        std::uint32_t nc = r.u32("undo.commit_frees");
        for (std::uint32_t j = 0; j < nc; ++j) i.free_on_commit.push_back(get_digest(r, "undo.commit_free"));
        std::uint32_t na = r.u32("undo.abort_frees");
        for (std::uint32_t j = 0; j < na; ++j) i.free_on_abort.push_back(get_digest(r, "undo.abort_free"));
        u.inodes.push_back(std::move(i));
    }
    r.expect_done("undo record");
    return u;
}

Fileserver::OpScope::OpScope(Fileserver& fs) : fs_(fs)
{
    ++fs_.busy_;
}

Fileserver::OpScope::~OpScope()
{
    if (--fs_.busy_ == 0 && std::uncaught_exceptions() == 0) {
        try {
            fs_.process_deferred();
        } catch (const Error& e) {
            fs_.env_.trace(fs_.actor_, "revoke-failed", e.what());
        }
    }
}

Fileserver::Fileserver(Env& env, FsConfig config, const KeyRegistry& keys, FgrpKeyring keyring, StorageServer& ss,
                       LhashServer& lhash, StableStorage& disk, std::uint64_t seed)
    : env_(env),
      config_(std::move(config)),
      actor_("fs" + std::to_string(config_.node_id)),
      keys_(keys),
      keyring_(std::move(keyring)),
      ss_(ss),
      lhash_(lhash),
      disk_(disk),
      seed_(seed)
{
    boot();
}

Fileserver::~Fileserver() = default;

void Fileserver::boot()
{
    vm_ = std::make_unique<VolumeManager>(env_, actor_, disk_, keys_, keyring_, ss_, &lhash_, config_.vm, seed_,
                                          lhash_.name());
    if (auto v = disk_.get("fs.txid")) {
        Reader r(*v);
        txid_ = r.u64("fs.txid");
    }
    for (const auto& k : disk_.keys_with_prefix("orphan.")) {
        Bytes raw = from_hex(k.substr(7));
        Reader r(raw);
        orphans_.insert(InodeNumber::unpack(r.u64("orphan.ino")));
    }
    lhash_.register_client(config_.node_id, actor_, this);
}

// ---- bitmap

std::set<std::uint32_t> Fileserver::bitmap(PrincipalId uid) const
{
    std::set<std::uint32_t> out;
    if (auto v = disk_.get("bitmap." + std::to_string(uid))) {
        Reader r(*v);
        std::uint32_t n = r.u32("bitmap.n");
        for (std::uint32_t i = 0; i < n; ++i) out.insert(r.u32("bitmap.seq"));
    }
    return out;
}

std::uint32_t Fileserver::alloc_seq(PrincipalId uid)
{
    auto used = bitmap(uid);
    std::uint32_t seq = 1;
    while (used.count(seq)) ++seq;
    return seq;
}

void Fileserver::set_bit(InodeNumber ino, bool on)
{
    if (ino.node_id != config_.node_id) return;
    auto used = bitmap(ino.owner_uid);
    if (on)
        used.insert(ino.local_seq);
    else
        used.erase(ino.local_seq);
    Writer w;
    w.u32(static_cast<std::uint32_t>(used.size()));
    for (auto s : used) w.u32(s);
    disk_.put("bitmap." + std::to_string(ino.owner_uid), std::move(w).take());
}

// ---- locks

std::map<InodeNumber, LockMode> Fileserver::held_locks() const
{
    std::map<InodeNumber, LockMode> out;
    for (const auto& [ino, h] : held_) out[ino] = h.mode;
    return out;
}

Idata Fileserver::lock(InodeNumber ino, LockMode mode, PrincipalId uid)
{
    auto h = held_.find(ino);
    if (h != held_.end() && (h->second.mode == LockMode::Exclusive || mode == LockMode::Shared)) {
        auto& v = h->second.vouched;
        if (!v.count({uid, mode}) && !v.count({uid, LockMode::Exclusive})) {
            env_.call(actor_, lhash_.name(), "acquire_lock",
                      [&] { return lhash_.acquire_lock(config_.node_id, uid, ino, mode); });
            v.insert({uid, mode});
        }
        h->second.last_used = env_.now();
        return h->second.idata;
    }
    // Registered first: the grant callback may arrive before the call returns.
    waiting_[ino] = Waiting{};
    LockGrant g;
    try {
        g = env_.call(actor_, lhash_.name(), "acquire_lock",
                      [&] { return lhash_.acquire_lock(config_.node_id, uid, ino, mode); });
    } catch (...) {
        waiting_.erase(ino);
        throw;
    }
    if (!g.granted) {
        for (;;) {
            auto& w = waiting_[ino];
            if (w.granted_mode || w.denied) break;
            if (env_.in_flight()) {
                env_.pump();
                if (env_.in_flight()) env_.advance(1);
                continue;
            }
            env_.advance(100);
            env_.call(actor_, lhash_.name(), "lock_poll", [&] { lhash_.tick(); });
        }
        Waiting w = waiting_[ino];
        waiting_.erase(ino);
        if (w.denied) raise(*w.denied, "lock on " + ino.str() + " timed out");
        g = LockGrant{true, w.idata};
    }
    waiting_.erase(ino);
    held_[ino] = Held{mode, g.idata, env_.now(), {{uid, mode}}};
    return g.idata;
}

void Fileserver::drop_lock(InodeNumber ino)
{
    held_.erase(ino);
    env_.call(actor_, lhash_.name(), "release_lock", [&] { lhash_.release_lock(config_.node_id, ino); });
}

void Fileserver::on_lock_granted(InodeNumber ino, LockMode mode, Idata idata)
{
    auto it = waiting_.find(ino);
    if (it == waiting_.end()) return;
    it->second.granted_mode = mode;
    it->second.idata = idata;
}

void Fileserver::on_lock_denied(InodeNumber ino, Errc why)
{
    auto it = waiting_.find(ino);
    if (it == waiting_.end()) return;
    it->second.denied = why;
}

void Fileserver::on_revoke(InodeNumber ino, LockMode wanted)
{
    deferred_revokes_.emplace_back(ino, wanted);
    if (busy_ == 0) process_deferred();
}

void Fileserver::process_deferred()
{
    while (!deferred_revokes_.empty()) {
        auto [ino, wanted] = deferred_revokes_.front();
        deferred_revokes_.erase(deferred_revokes_.begin());
        auto h = held_.find(ino);
        bool is_dirty = tx_.count(ino) != 0;
        env_.trace(actor_, "revoke", ino.str() + " wants " + lock_mode_name(wanted) + (is_dirty ? " dirty" : ""));
        if (wanted == LockMode::Exclusive) {
            if (is_dirty) commit();
            drop_lock(ino);
        } else if (h == held_.end()) {
            drop_lock(ino);
        } else if (h->second.mode == LockMode::Exclusive) {
            // Uncommitted changes stay local; others read the committed version.
            h->second.mode = LockMode::Shared;
            env_.call(actor_, lhash_.name(), "downgrade_lock", [&] { lhash_.downgrade_lock(config_.node_id, ino); });
        }
    }
}

FgrpId Fileserver::fgrp_of(InodeNumber ino)
{
    if (auto it = fgrp_cache_.find(ino); it != fgrp_cache_.end()) return it->second;
    auto f = env_.call(actor_, lhash_.name(), "fgrp_lookup", [&] { return lhash_.fgrp_lookup(ino); });
    if (!f) raise(Errc::PermissionDenied, "no filegroup for " + ino.str());
    fgrp_cache_[ino] = *f;
    return *f;
}

// ---- inode and block access

Inode Fileserver::load_committed(InodeNumber ino, const Idata& d)
{
    return decode_inode(vm_->vm_read(d.inode_hash, fgrp_of(ino)));
}

void Fileserver::check_live(InodeNumber ino, const Inode& inode, const Idata& d)
{
    (void)d;
    if (inode.link_count == 0 && open_refs_[ino] <= 0) raise(Errc::StaleFileHandle, ino.str() + " was deleted");
}

Inode Fileserver::view(InodeNumber ino, PrincipalId uid, LockMode mode)
{
    if (auto t = tx_.find(ino); t != tx_.end()) {
        if (t->second.deleted) raise(Errc::StaleFileHandle, ino.str() + " was deleted");
        if (mode == LockMode::Exclusive) lock(ino, mode, uid);
        check_live(ino, t->second.inode, t->second.base);
        return t->second.inode;
    }
    Idata d = lock(ino, mode, uid);
    if (!d.exists()) {
        if (d.incarnation != 0) raise(Errc::StaleFileHandle, ino.str() + " was deleted");
        raise(Errc::NotFound, "no inode " + ino.str());
    }
    Inode inode = load_committed(ino, d);
    check_live(ino, inode, d);
    return inode;
}

Fileserver::TxInode& Fileserver::dirty_inode(InodeNumber ino, PrincipalId uid, bool unlinked_ok)
{
    if (auto t = tx_.find(ino); t != tx_.end()) {
        if (uid == tx_uid_) {
            lock(ino, LockMode::Exclusive, uid);
            return t->second;
        }
    }
    if (!tx_.empty() && tx_uid_ != uid) commit();
    Idata d = lock(ino, LockMode::Exclusive, uid);
    TxInode t;
    t.base = d;
    if (d.exists()) {
        t.inode = load_committed(ino, d);
        if (!unlinked_ok) check_live(ino, t.inode, d);
    } else if (d.incarnation != 0 && !unlinked_ok) {
        raise(Errc::StaleFileHandle, ino.str() + " was deleted");
    }
    tx_uid_ = uid;
    return tx_.emplace(ino, std::move(t)).first->second;
}

std::vector<Digest> Fileserver::read_node(const Digest& d, FgrpId fgrp)
{
    Bytes b = vm_->vm_read(d, fgrp);
    Reader r(b);
    std::vector<Digest> out(indirect_fanout());
    for (auto& x : out) x = Digest(r.raw(digest_width(), "indirect.pointer"));
    return out;
}

Digest Fileserver::pointer(const Inode& inode, std::uint64_t idx)
{
    if (idx < kDirectPointers) return inode.direct[idx];
    idx -= kDirectPointers;
    const std::uint64_t f = indirect_fanout();
    std::uint64_t span = f;
    for (std::size_t level = 0; level < kIndirectLevels; ++level) {
        if (idx < span) {
            Digest d = inode.indirect[level];
            std::uint64_t child_span = span / f;
            for (std::size_t depth = level + 1; depth > 0; --depth) {
                if (d.is_zero()) return d;
                auto node = read_node(d, inode.fgrp);
                d = node[(idx / child_span) % f];
                idx %= child_span;
                child_span = depth > 1 ? child_span / f : 1;
            }
            return d;
        }
        idx -= span;
        span *= f;
    }
    raise(Errc::InvalidArgument, "offset beyond the largest file");
}

Bytes Fileserver::read_leaf(InodeNumber ino, const Inode& inode, std::uint64_t idx)
{
    if (auto t = tx_.find(ino); t != tx_.end())
        if (auto l = t->second.leaves.find(idx); l != t->second.leaves.end()) return l->second;
    Digest d = pointer(inode, idx);
    if (d.is_zero()) return Bytes(kBlockSize, 0);
    Bytes b = vm_->vm_read(d, inode.fgrp);
    b.resize(kBlockSize, 0);
    return b;
}

Bytes Fileserver::file_bytes(InodeNumber ino, const Inode& inode, std::uint64_t off, std::size_t len)
{
    Bytes out;
    if (off >= inode.size) return out;
    std::uint64_t end = std::min<std::uint64_t>(inode.size, off + len);
    while (off < end) {
        std::uint64_t idx = off / kBlockSize;
        std::uint64_t in = off % kBlockSize;
        std::uint64_t n = std::min<std::uint64_t>(kBlockSize - in, end - off);
        Bytes leaf = read_leaf(ino, inode, idx);
        out.insert(out.end(), leaf.begin() + in, leaf.begin() + in + n);
        off += n;
    }
    return out;
}

void Fileserver::put_bytes(InodeNumber ino, PrincipalId uid, std::uint64_t off, ByteView data)
{
    TxInode& t = dirty_inode(ino, uid);
    std::size_t pos = 0;
    while (pos < data.size()) {
        std::uint64_t idx = (off + pos) / kBlockSize;
        std::uint64_t in = (off + pos) % kBlockSize;
        std::size_t n = std::min<std::size_t>(kBlockSize - in, data.size() - pos);
        Bytes leaf = read_leaf(ino, t.inode, idx);
        std::copy(data.begin() + pos, data.begin() + pos + n, leaf.begin() + in);
        t.leaves[idx] = std::move(leaf);
        pos += n;
    }
    t.inode.size = std::max<std::uint64_t>(t.inode.size, off + data.size());
}

Bytes Fileserver::read(InodeNumber ino, std::uint64_t offset, std::size_t len, PrincipalId uid)
{
    OpScope op(*this);
    Inode inode = view(ino, uid, LockMode::Shared);
    if (inode.type == InodeType::Directory) raise(Errc::IsDirectory, ino.str());
    return file_bytes(ino, inode, offset, len);
}

void Fileserver::write(InodeNumber ino, std::uint64_t offset, ByteView data, PrincipalId uid)
{
    OpScope op(*this);
    Inode inode = view(ino, uid, LockMode::Exclusive);
    if (inode.type == InodeType::Directory) raise(Errc::IsDirectory, ino.str());
    put_bytes(ino, uid, offset, data);
}

Inode Fileserver::stat(InodeNumber ino, PrincipalId uid)
{
    OpScope op(*this);
    return view(ino, uid, LockMode::Shared);
}

// ---- directories

std::vector<DirEntry> Fileserver::dir_entries(InodeNumber dir, PrincipalId uid, LockMode mode)
{
    Inode inode = view(dir, uid, mode);
    if (inode.type != InodeType::Directory) raise(Errc::NotDirectory, dir.str());
    return decode_dir(file_bytes(dir, inode, 0, inode.size));
}

void Fileserver::write_dir(InodeNumber dir, PrincipalId uid, const std::vector<DirEntry>& entries)
{
    Bytes b = encode_dir(entries);
    put_bytes(dir, uid, 0, b);
    tx_.at(dir).inode.size = b.size();
}

InodeNumber Fileserver::lookup(const std::string& path, PrincipalId uid)
{
    OpScope op(*this);
    InodeNumber cur = kRootIno;
    for (const auto& name : split_path(path)) {
        auto entries = dir_entries(cur, uid, LockMode::Shared);
        auto it = std::find_if(entries.begin(), entries.end(), [&](const DirEntry& e) { return e.name == name; });
        if (it == entries.end()) raise(Errc::NotFound, path);
        cur = it->ino;
    }
    view(cur, uid, LockMode::Shared);
    return cur;
}

std::vector<DirEntry> Fileserver::readdir(const std::string& path, PrincipalId uid)
{
    OpScope op(*this);
    return dir_entries(lookup(path, uid), uid, LockMode::Shared);
}

std::pair<InodeNumber, std::string> Fileserver::parent_of(const std::string& path, PrincipalId uid)
{
    auto parts = split_path(path);
    if (parts.empty()) raise(Errc::Exists, "/");
    std::string name = parts.back();
    if (name.size() > 255) raise(Errc::InvalidArgument, "name longer than 255 bytes");
    std::string parent = "/";
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) parent += (i ? "/" : "") + parts[i];
    return {lookup(parent, uid), name};
}

InodeNumber Fileserver::make(const std::string& path, PrincipalId uid, FgrpId fgrp, InodeType type)
{
    OpScope op(*this);
    if (uid > 0xffff) raise(Errc::InvalidArgument, "uid does not fit an inode number");
    auto [dir, name] = parent_of(path, uid);
    auto entries = dir_entries(dir, uid, LockMode::Exclusive);
    for (const auto& e : entries)
        if (e.name == name) raise(Errc::Exists, path);
    if (!tx_.empty() && tx_uid_ != uid) commit();
    InodeNumber ino{config_.node_id, static_cast<std::uint16_t>(uid), alloc_seq(uid)};
    set_bit(ino, true);
    try {
        env_.call(actor_, lhash_.name(), "fgrp_register", [&] { lhash_.fgrp_register(uid, ino, fgrp); });
    } catch (...) {
        set_bit(ino, false);
        throw;
    }
    fgrp_cache_[ino] = fgrp;
    // A freed number comes back with its old incarnation; the next one follows it.
    TxInode& t = dirty_inode(ino, uid, true);
    t.created = true;
    t.inode = Inode{};
    t.inode.type = type;
    t.inode.fgrp = fgrp;
    t.inode.link_count = 1;
    if (type == InodeType::Directory) write_dir(ino, uid, {});
    entries.push_back(DirEntry{name, ino});
    write_dir(dir, uid, entries);
    env_.trace(actor_, "create", path + " " + ino.str());
    return ino;
}

InodeNumber Fileserver::create(const std::string& path, PrincipalId uid, FgrpId fgrp)
{
    return make(path, uid, fgrp, InodeType::File);
}

InodeNumber Fileserver::mkdir(const std::string& path, PrincipalId uid, FgrpId fgrp)
{
    return make(path, uid, fgrp, InodeType::Directory);
}

void Fileserver::unlink(const std::string& path, PrincipalId uid)
{
    OpScope op(*this);
    auto [dir, name] = parent_of(path, uid);
    auto entries = dir_entries(dir, uid, LockMode::Exclusive);
    auto it = std::find_if(entries.begin(), entries.end(), [&](const DirEntry& e) { return e.name == name; });
    if (it == entries.end()) raise(Errc::NotFound, path);
    InodeNumber target = it->ino;
    TxInode& t = dirty_inode(target, uid);
    if (t.inode.type == InodeType::Directory && !decode_dir(file_bytes(target, t.inode, 0, t.inode.size)).empty())
        raise(Errc::Exists, path + " is not empty");
    entries.erase(it);
    write_dir(dir, uid, entries);
    TxInode& tt = tx_.at(target);
    if (tt.inode.link_count > 0) --tt.inode.link_count;
    if (tt.inode.link_count == 0) {
        if (open_refs_[target] > 0) {
            orphans_.insert(target);
            Writer w;
            w.u32(uid);
            disk_.put("orphan." + hex_ino(target), std::move(w).take());
        } else {
            tt.deleted = true;
        }
    }
    env_.trace(actor_, "unlink", path + " " + target.str());
}

InodeNumber Fileserver::open(const std::string& path, PrincipalId uid)
{
    OpScope op(*this);
    InodeNumber ino = lookup(path, uid);
    ++open_refs_[ino];
    return ino;
}

void Fileserver::close(InodeNumber ino)
{
    OpScope op(*this);
    auto it = open_refs_.find(ino);
    if (it == open_refs_.end() || it->second <= 0) raise(Errc::InvalidArgument, ino.str() + " is not open");
    if (--it->second > 0) return;
    open_refs_.erase(it);
    if (orphans_.count(ino)) {
        PrincipalId uid = ino.owner_uid;
        if (auto v = disk_.get("orphan." + hex_ino(ino))) {
            Reader r(*v);
            uid = r.u32("orphan.uid");
        }
        delete_now(ino, uid);
        commit();
    }
}

void Fileserver::delete_now(InodeNumber ino, PrincipalId uid)
{
    TxInode& t = dirty_inode(ino, uid, true);
    t.inode.link_count = 0;
    t.deleted = true;
}

// ---- transactions

Digest Fileserver::rebuild(const Digest& old_root, int depth, std::uint64_t base, FgrpId fgrp, InodeNumber ino,
                           PrincipalId uid, const std::map<std::uint64_t, Digest>& leaves, UndoInode& undo,
                           std::vector<VolumeManager::WriteReq>& writes)
{
    const std::uint64_t f = indirect_fanout();
    std::uint64_t child_span = 1;
    for (int i = 1; i < depth; ++i) child_span *= f;
    std::vector<Digest> node = old_root.is_zero() ? std::vector<Digest>(f) : read_node(old_root, fgrp);
    std::map<std::uint64_t, std::map<std::uint64_t, Digest>> by_child;
    for (const auto& [idx, d] : leaves) by_child[(idx - base) / child_span][idx] = d;
    for (const auto& [c, sub] : by_child) {
        if (depth == 1)
            node[c] = sub.begin()->second;
        else
            node[c] = rebuild(node[c], depth - 1, base + c * child_span, fgrp, ino, uid, sub, undo, writes);
    }
    // Raw pointers, no length prefix: exactly one block's worth.
    Writer w;
    for (const auto& d : node) w.raw(d.view());
    Bytes plain = std::move(w).take();
    plain.resize(kBlockSize, 0);
    Digest id = digest(vm_->seal(plain, fgrp));
    writes.push_back(VolumeManager::WriteReq{std::move(plain), ino, uid, fgrp});
    undo.free_on_abort.push_back(id);
    if (!old_root.is_zero()) undo.free_on_commit.push_back(old_root);
    return id;
}

void Fileserver::collect_blocks(const Digest& root, int depth, FgrpId fgrp, std::vector<Digest>& out)
{
    if (root.is_zero()) return;
    out.push_back(root);
    if (depth == 0) return;
    for (const auto& child : read_node(root, fgrp)) collect_blocks(child, depth - 1, fgrp, out);
}

std::vector<Digest> Fileserver::reachable_blocks(const Idata& d, FgrpId fgrp)
{
    std::vector<Digest> out;
    if (!d.exists()) return out;
    out.push_back(d.inode_hash);
    Inode inode = decode_inode(vm_->vm_read(d.inode_hash, fgrp));
    for (const auto& p : inode.direct)
        if (!p.is_zero()) out.push_back(p);
    for (std::size_t l = 0; l < kIndirectLevels; ++l) collect_blocks(inode.indirect[l], static_cast<int>(l) + 1, inode.fgrp, out);
    return out;
}

std::optional<std::uint64_t> Fileserver::commit()
{
    if (in_doubt_) resolve_in_doubt();
    if (tx_.empty()) return std::nullopt;
    OpScope op(*this);
    const PrincipalId uid = tx_uid_;
    UndoRecord u;
    u.txid = txid_ + 1;
    u.uid = uid;
    StoreInodeDataMsg msg;
    msg.txid = u.txid;
    std::vector<VolumeManager::WriteReq> writes;
    env_.point(actor_, "fs.commit.begin");

    std::optional<InodeNumber> conflict;
    for (auto& [ino, t] : tx_)
        if (lock(ino, LockMode::Exclusive, uid) != t.base) conflict = ino;
    if (conflict) {
        abort();
        raise(Errc::LockBusy, conflict->str() + " changed under a downgraded lock");
    }
    for (auto& [ino, t] : tx_) {
        UndoInode ui;
        ui.ino = ino;
        ui.old_idata = t.base;
        ui.created = t.created;
        const FgrpId fgrp = t.inode.fgrp;
        if (t.deleted) {
            if (t.base.exists()) {
                ui.free_on_commit = reachable_blocks(t.base, fgrp);
                msg.pairs.emplace_back(ino, Idata{});
            }
            u.inodes.push_back(std::move(ui));
            continue;
        }
        Inode ni = t.inode;
        std::map<std::uint64_t, Digest> new_leaves;
        for (auto& [idx, plain] : t.leaves) {
            Digest id = digest(vm_->seal(plain, fgrp));
            Digest old = pointer(t.inode, idx);
            if (!old.is_zero()) ui.free_on_commit.push_back(old);
            ui.free_on_abort.push_back(id);
            writes.push_back(VolumeManager::WriteReq{plain, ino, uid, fgrp});
            new_leaves[idx] = id;
        }
        const std::uint64_t f = indirect_fanout();
        std::uint64_t base = kDirectPointers, span = f;
        for (std::size_t l = 0; l < kIndirectLevels; ++l) {
            std::map<std::uint64_t, Digest> in_level;
            for (const auto& [idx, id] : new_leaves)
                if (idx >= base && idx < base + span) in_level[idx] = id;
            if (!in_level.empty())
                ni.indirect[l] = rebuild(t.inode.indirect[l], static_cast<int>(l) + 1, base, fgrp, ino, uid, in_level, ui, writes);
            base += span;
            span *= f;
        }
        for (const auto& [idx, id] : new_leaves)
            if (idx < kDirectPointers) ni.direct[idx] = id;
        Bytes plain = encode_inode(ni);
        Digest inode_id = digest(vm_->seal(plain, fgrp));
        writes.push_back(VolumeManager::WriteReq{std::move(plain), ino, uid, fgrp});
        ui.free_on_abort.push_back(inode_id);
        if (t.base.exists()) ui.free_on_commit.push_back(t.base.inode_hash);
        ui.new_hash = inode_id;
        msg.pairs.emplace_back(ino, Idata{inode_id, 0});
        u.inodes.push_back(std::move(ui));
    }

    Writer rec;
    rec.u8(kUndoTag);
    rec.raw(encode_undo(u));
    vm_->write_group(writes, {}, {std::move(rec).take()});
    stats_.last_blocks_written = writes.size();
    in_doubt_ = u;
    auto dirty = std::move(tx_);
    tx_.clear();
    env_.point(actor_, "fs.commit.logged");

    try {
        env_.call(actor_, lhash_.name(), "store_inode_data", [&] { return lhash_.store_inode_data(config_.node_id, uid, msg); });
    } catch (const Error& e) {
        for (const auto& [ino, t] : dirty) held_.erase(ino);
        if (e.code() == Errc::Unreachable) throw;
        env_.trace(actor_, "commit-rejected", e.what());
        finish(u, false);
        throw;
    }
    env_.point(actor_, "fs.commit.acked");
    finish(u, true);
    for (const auto& ui : u.inodes) {
        auto h = held_.find(ui.ino);
        if (h == held_.end()) continue;
        if (ui.new_hash.is_zero() && !ui.old_idata.exists())
            h->second.idata = ui.old_idata;
        else
            h->second.idata = Idata{ui.new_hash, ui.old_idata.incarnation + 1};
    }
    return u.txid;
}

void Fileserver::finish(const UndoRecord& u, bool committed)
{
    Writer done;
    done.u8(kDoneTag);
    done.u64(u.txid);
    done.u8(committed ? 1 : 0);
    std::vector<VolumeManager::FreeReq> frees;
    for (const auto& ui : u.inodes)
        for (const auto& d : committed ? ui.free_on_commit : ui.free_on_abort)
            frees.push_back(VolumeManager::FreeReq{d, ui.ino, u.uid});
    vm_->write_group({}, frees, {std::move(done).take()});
    stats_.last_blocks_freed = frees.size();
    env_.point(actor_, "fs.commit.done");

    if (committed) {
        txid_ = u.txid;
        Writer w;
        w.u64(txid_);
        disk_.put("fs.txid", std::move(w).take());
        ++stats_.commits;
    } else {
        ++stats_.aborts;
    }
    for (const auto& ui : u.inodes) {
        bool gone = ui.new_hash.is_zero();
        if ((committed && gone) || (!committed && ui.created)) set_bit(ui.ino, false);
        if (committed && gone) {
            orphans_.erase(ui.ino);
            disk_.erase("orphan." + hex_ino(ui.ino));
        }
    }
    in_doubt_.reset();
    env_.trace(actor_, committed ? "commit" : "abort",
               "txid=" + std::to_string(u.txid) + " inodes=" + std::to_string(u.inodes.size()) +
                   " frees=" + std::to_string(frees.size()));
    ++finished_since_compact_;
    maybe_compact();
}

void Fileserver::maybe_compact()
{
    if (finished_since_compact_ < config_.compact_every || in_doubt_) return;
    finished_since_compact_ = 0;
    vm_->compact({});
}

void Fileserver::abort()
{
    for (const auto& [ino, t] : tx_)
        if (t.created) set_bit(ino, false);
    if (!tx_.empty()) ++stats_.aborts;
    tx_.clear();
}

void Fileserver::resolve_in_doubt()
{
    if (!in_doubt_) return;
    std::uint64_t last = env_.call(actor_, lhash_.name(), "last_txid", [&] { return lhash_.last_txid(config_.node_id); });
    UndoRecord u = *in_doubt_;
    finish(u, u.txid <= last);
}

RecoveryReport Fileserver::restart()
{
    vm_.reset();
    held_.clear();
    waiting_.clear();
    fgrp_cache_.clear();
    tx_.clear();
    in_doubt_.reset();
    open_refs_.clear();
    orphans_.clear();
    deferred_revokes_.clear();
    busy_ = 0;
    txid_ = 0;
    finished_since_compact_ = 0;
    env_.set_down(actor_, false);
    boot();
    env_.trace(actor_, "restart");

    RecoveryReport rep;
    std::map<std::uint64_t, UndoRecord> undo;
    std::set<std::uint64_t> done;
    for (const auto& a : vm_->attachments()) {
        if (a.empty()) continue;
        if (a[0] == kUndoTag) {
            auto u = decode_undo(ByteView(a).subspan(1));
            undo[u.txid] = u;
        } else if (a[0] == kDoneTag) {
            Reader r(ByteView(a).subspan(1));
            done.insert(r.u64("done.txid"));
        }
    }
    rep.replay = vm_->vm_recover();
    std::uint64_t last = env_.call(actor_, lhash_.name(), "last_txid", [&] { return lhash_.last_txid(config_.node_id); });
    for (const auto& [txid, u] : undo) {
        if (done.count(txid)) continue;
        rep.in_doubt_txid = txid;
        bool committed = txid <= last;
        finish(u, committed);
        rep.committed = committed;
        rep.aborted = !committed;
        rep.frees = stats_.last_blocks_freed;
    }
    txid_ = std::max(txid_, last);
    std::vector<InodeNumber> orphans(orphans_.begin(), orphans_.end());
    for (InodeNumber ino : orphans) {
        PrincipalId uid = ino.owner_uid;
        if (auto v = disk_.get("orphan." + hex_ino(ino))) {
            Reader r(*v);
            uid = r.u32("orphan.uid");
        }
        try {
            delete_now(ino, uid);
            commit();
            ++rep.orphans_deleted;
        } catch (const Error& e) {
            env_.trace(actor_, "orphan-failed", ino.str() + " " + e.what());
            abort();
        }
    }
    return rep;
}

std::vector<InodeNumber> Fileserver::mount()
{
    lhash_.register_client(config_.node_id, actor_, this);
    auto freed = env_.call(actor_, lhash_.name(), "freed_inode_list", [&] { return lhash_.freed_inode_list(config_.node_id); });
    for (auto ino : freed) set_bit(ino, false);
    env_.trace(actor_, "mount", "freed=" + std::to_string(freed.size()));
    return freed;
}

void Fileserver::mkfs(PrincipalId uid)
{
    OpScope op(*this);
    Idata d = lock(kRootIno, LockMode::Exclusive, uid);
    if (d.exists()) return;
    auto fg = env_.call(actor_, lhash_.name(), "fgrp_lookup", [&] { return lhash_.fgrp_lookup(kRootIno); });
    if (!fg) raise(Errc::PermissionDenied, "root directory has no filegroup");
    fgrp_cache_[kRootIno] = *fg;
    if (!tx_.empty() && tx_uid_ != uid) commit();
    TxInode t;
    t.base = d;
    t.created = true;
    t.inode.type = InodeType::Directory;
    t.inode.fgrp = *fg;
    tx_uid_ = uid;
    tx_.emplace(kRootIno, std::move(t));
    write_dir(kRootIno, uid, {});
    commit();
}

void Fileserver::on_timer()
{
    OpScope op(*this);
    if (in_doubt_) {
        try {
            resolve_in_doubt();
        } catch (const Error& e) {
            if (e.code() != Errc::Unreachable) throw;
        }
    }
    vm_->on_timer();
    std::vector<InodeNumber> idle;
    for (const auto& [ino, h] : held_)
        if (!tx_.count(ino) && env_.now() - h.last_used >= config_.lock_drop_interval) idle.push_back(ino);
    for (auto ino : idle) drop_lock(ino);
}

}  // namespace safius
