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

#include "safius/storage_server.hpp"

#include <limits>

namespace safius {

StorageServer::StorageServer(Env& env, const KeyRegistry& keys, ServerConfig config, std::string name)
    : env_(env), keys_(keys), config_(config), name_(std::move(name))
{
}

void StorageServer::attach_directory(const FgrpDirectory* dir, std::string lhash_name)
{
    dir_ = dir;
    lhash_name_ = std::move(lhash_name);
}

void StorageServer::open_session(const SessionNonce& s)
{
    auto& nonces = sessions_[s.principal];
    if (!nonces.insert(s.nonce).second) raise(Errc::Replay, "nonce reused by principal " + std::to_string(s.principal));
    env_.trace(name_, "session", "uid=" + std::to_string(s.principal) + " nonce=" + std::to_string(s.nonce));
}

Bytes StorageServer::load(const Digest& blknum)
{
    ++stats_.loads;
    if (faults_.report_not_found.count(blknum)) raise(Errc::NotFound, blknum.short_hex());
    auto it = blocks_.find(blknum);
    if (it == blocks_.end() || !it->second.live()) raise(Errc::NotFound, blknum.short_hex());
    Bytes data = it->second.data;
    if (auto c = faults_.corrupt_on_load.find(blknum); c != faults_.corrupt_on_load.end() && !data.empty()) {
        std::uint64_t bit = c->second % (data.size() * 8);
        data[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    }
    return data;
}

bool StorageServer::may_write(PrincipalId uid, InodeNumber ino)
{
    if (uid == ino.owner_uid) return true;
    if (!dir_) return false;
    Digest h = dir_->current_fgrphash();
    if (!cache_hash_ || *cache_hash_ != h) {
        fgrp_cache_.clear();
        cache_hash_ = h;
    }
    auto it = fgrp_cache_.find(ino);
    if (it == fgrp_cache_.end()) {
        auto rec = env_.call(name_, lhash_name_, "fgrp_lookup", [&] { return dir_->fgrp_record(ino); });
        it = fgrp_cache_.emplace(ino, std::move(rec)).first;
    }
    return it->second && it->second->writers.count(uid) != 0;
}

void StorageServer::check_session(PrincipalId uid, const BatchEntry& e) const
{
    auto it = sessions_.find(uid);
    if (it == sessions_.end() || !it->second.count(e.nonce))
        raise(Errc::AccessDenied, "no session " + std::to_string(e.nonce) + " for uid " + std::to_string(uid));
    if (e.count == std::numeric_limits<std::uint64_t>::max()) raise(Errc::SessionExhausted, "count overflow");
}

void StorageServer::apply(OpKind op, PrincipalId uid, const BatchEntry& e, ByteView data)
{
    if (!may_write(uid, e.ino))
        raise(Errc::AccessDenied, "uid " + std::to_string(uid) + " may not write ino " + e.ino.str());
    if (op == OpKind::Store) {
        auto& b = blocks_[e.blknum];
        if (b.data.empty()) b.data.assign(data.begin(), data.end());
        ++b.refs[e.ino];
        ++ledger_[e.blknum][uid];
        ++stats_.stores;
    } else {
        auto it = blocks_.find(e.blknum);
        if (it == blocks_.end()) raise(Errc::NoSuchReference, e.blknum.short_hex());
        auto r = it->second.refs.find(e.ino);
        if (r == it->second.refs.end()) raise(Errc::NoSuchReference, e.blknum.short_hex() + " ino " + e.ino.str());
        if (--r->second == 0) it->second.refs.erase(r);
        if (--ledger_[e.blknum][uid] == 0) ledger_[e.blknum].erase(uid);
        ++stats_.frees;
    }
}

void StorageServer::unapply(const UndoStep& u)
{
    auto& b = blocks_[u.entry.blknum];
    if (u.op == OpKind::Store) {
        auto r = b.refs.find(u.entry.ino);
        if (r != b.refs.end() && --r->second == 0) b.refs.erase(r);
        if (--ledger_[u.entry.blknum][u.uid] == 0) ledger_[u.entry.blknum].erase(u.uid);
        --stats_.stores;
    } else {
        ++b.refs[u.entry.ino];
        if (++ledger_[u.entry.blknum][u.uid] == 0) ledger_[u.entry.blknum].erase(u.uid);
        --stats_.frees;
    }
    sweep(u.entry.blknum);
}

std::map<PrincipalId, std::int64_t> StorageServer::per_uid(const Digest& blknum) const
{
    auto it = ledger_.find(blknum);
    return it == ledger_.end() ? std::map<PrincipalId, std::int64_t>{} : it->second;
}

void StorageServer::sweep(const Digest& blknum)
{
    auto it = blocks_.find(blknum);
    if (it == blocks_.end() || it->second.live()) return;
    auto p = pending_refs_.find(blknum);
    if (p != pending_refs_.end() && p->second > 0) return;
    blocks_.erase(it);
}

void StorageServer::add_pending(PrincipalId uid, const BatchEntry& e)
{
    pending_[uid].push_back(PendingOp{uid, e, env_.now()});
    ++pending_refs_[e.blknum];
}

void StorageServer::commit_signed(PrincipalId uid, const BatchEntry& e)
{
    (void)uid;
    // Quota-style charging: references are counted against the inode owner.
    tree_.apply(e.blknum, e.ino.owner_uid, e.op == OpKind::Store ? 1 : -1);
    sweep(e.blknum);
}

void StorageServer::reject(std::optional<std::size_t> index, const std::string& why)
{
    ++stats_.rejects;
    last_reject_ = RejectInfo{index, why};
    std::string where = index ? " at entry " + std::to_string(*index) : std::string();
    env_.trace(name_, "reject", why + where);
    raise(Errc::Reject, why + where);
}

void StorageServer::handle_store(ByteView data, const BatchEntry& entry, PrincipalId uid)
{
    if (entry.op != OpKind::Store) raise(Errc::InvalidArgument, "store with op=free");
    check_session(uid, entry);
    if (seen(uid, entry)) raise(Errc::Replay, "store nonce=" + std::to_string(entry.nonce) + " count=" + std::to_string(entry.count));
    env_.charge_hash(data.size());
    if (digest(data) != entry.blknum) raise(Errc::DigestMismatch, entry.blknum.short_hex());
    apply(OpKind::Store, uid, entry, data);
    mark_seen(uid, entry);
    if (config_.require_signatures)
        add_pending(uid, entry);
    else
        sweep(entry.blknum);
}

void StorageServer::handle_free(const BatchEntry& entry, PrincipalId uid)
{
    if (entry.op != OpKind::Free) raise(Errc::InvalidArgument, "free with op=store");
    check_session(uid, entry);
    if (seen(uid, entry)) raise(Errc::Replay, "free nonce=" + std::to_string(entry.nonce) + " count=" + std::to_string(entry.count));
    apply(OpKind::Free, uid, entry, {});
    mark_seen(uid, entry);
    if (config_.require_signatures)
        add_pending(uid, entry);
    else
        sweep(entry.blknum);
}

GrantBatch StorageServer::verify_and_grant(const RequestBatch& batch, const std::map<Digest, Bytes>& data_blocks)
{
    const PrincipalId uid = batch.header.uid;
    if (faults_.refuse_grant_for.count(uid)) reject(std::nullopt, "grant refused");
    if (batch.header.count != batch.entries.size()) reject(std::nullopt, "header count mismatch");

    Digest pd = payload_digest(batch);
    ++stats_.verify_calls;
    env_.charge_verify();
    if (batch.sig.signer != uid || !keys_.verify(uid, pd, batch.sig)) reject(std::nullopt, "bad request signature");

    if (auto g = granted_.find(pd); g != granted_.end()) return g->second;

    auto& pend = pending_[uid];
    std::map<std::pair<Nonce, std::uint64_t>, BatchEntry> pending_keys;
    for (const auto& p : pend) pending_keys.emplace(std::make_pair(p.entry.nonce, p.entry.count), p.entry);
    std::size_t covered = 0;
    std::vector<UndoStep> undo;
    auto rollback = [&] {
        for (auto it = undo.rbegin(); it != undo.rend(); ++it) {
            seen_.erase({it->uid, it->entry.nonce, it->entry.count});
            unapply(*it);
        }
    };

    for (std::size_t i = 0; i < batch.entries.size(); ++i) {
        const BatchEntry& e = batch.entries[i];
        if (auto pk = pending_keys.find({e.nonce, e.count}); pk != pending_keys.end()) {
            if (pk->second != e) {
                rollback();
                reject(i, "entry differs from the executed op");
            }
            pending_keys.erase(pk);
            ++covered;
            continue;
        }
        if (seen(uid, e)) {
            rollback();
            reject(i, "entry already executed out of order or granted");
        }
        try {
            check_session(uid, e);
            ByteView data;
            if (e.op == OpKind::Store) {
                auto d = data_blocks.find(e.blknum);
                if (d == data_blocks.end()) raise(Errc::NotFound, "no data for unsent store");
                env_.charge_hash(d->second.size());
                if (digest(d->second) != e.blknum) raise(Errc::DigestMismatch, e.blknum.short_hex());
                data = d->second;
            }
            apply(e.op, uid, e, data);
            mark_seen(uid, e);
            undo.push_back(UndoStep{e.op, uid, e});
        } catch (const Error& err) {
            rollback();
            reject(i, err.what());
        }
    }
    if (covered != pend.size()) {
        rollback();
        reject(std::nullopt, "batch does not cover " + std::to_string(pend.size() - covered) + " pending ops");
    }

    // Accepted: pending ops become signed history.
    for (const auto& p : pend) --pending_refs_[p.entry.blknum];
    pend.clear();
    for (const auto& e : batch.entries) commit_signed(uid, e);
    for (const auto& e : batch.entries) sweep(e.blknum);

    GrantBatch g;
    g.inner = batch;
    g.fgrphash = dir_ ? dir_->current_fgrphash() : MerkleMap::empty_root();
    ++stats_.sign_calls;
    env_.charge_sign();
    g.sig = keys_.sign(kStorageServerPrincipal, payload_digest(g));
    retained_batches_.push_back(batch);
    granted_.emplace(pd, g);
    ++stats_.grants;
    env_.trace(name_, "grant", "uid=" + std::to_string(uid) + " entries=" + std::to_string(batch.entries.size()));
    return g;
}

GrantSingle StorageServer::handle_signed(const SignedRequest& req, ByteView data)
{
    const auto& r = req.req;
    Digest pd = payload_digest(r);
    ++stats_.verify_calls;
    env_.charge_verify();
    if (req.sig.signer != r.uid || !keys_.verify(r.uid, pd, req.sig)) raise(Errc::BadSignature, "request signature");
    if (auto g = granted_singles_.find(pd); g != granted_singles_.end()) return g->second;
    if (faults_.refuse_grant_for.count(r.uid)) reject(std::nullopt, "grant refused");

    BatchEntry e = to_entry(r);
    check_session(r.uid, e);
    if (seen(r.uid, e)) raise(Errc::Replay, "signed op already executed");
    if (r.op == OpKind::Store) {
        env_.charge_hash(data.size());
        if (digest(data) != r.blknum) raise(Errc::DigestMismatch, r.blknum.short_hex());
    }
    apply(r.op, r.uid, e, data);
    mark_seen(r.uid, e);
    commit_signed(r.uid, e);

    GrantSingle g;
    g.inner = r;
    g.fgrphash = dir_ ? dir_->current_fgrphash() : MerkleMap::empty_root();
    ++stats_.sign_calls;
    env_.charge_sign();
    g.sig = keys_.sign(kStorageServerPrincipal, payload_digest(g));
    retained_singles_.push_back(req);
    granted_singles_.emplace(pd, g);
    ++stats_.grants;
    return g;
}

PruneReply StorageServer::server_prune_round(const Digest& lhash_root, const RefcntTree& lhash_tree)
{
    if (tree_.root() != lhash_root) {
        auto div = first_divergence(tree_.map(), lhash_tree.map());
        if (!div) {
            // Roots differ but the supplied tree matches ours: the root was stale.
            div = Divergence{};
        }
        PruneMismatch m{*div, div->key.empty() ? Digest() : Digest(div->key)};
        env_.trace(name_, "prune-mismatch", m.blknum.short_hex());
        return m;
    }
    SignedRoot sr;
    sr.root = tree_.root();
    sr.epoch = ++prune_epoch_;
    ++stats_.sign_calls;
    env_.charge_sign();
    sr.sig = keys_.sign(kStorageServerPrincipal, payload_digest(sr));
    last_root_ = sr;
    retained_batches_.clear();
    retained_singles_.clear();
    granted_.clear();
    granted_singles_.clear();
    env_.trace(name_, "prune-agree", "epoch=" + std::to_string(sr.epoch) + " leaves=" + std::to_string(tree_.leaves()));
    return sr;
}

void StorageServer::tick()
{
    for (auto& [uid, pend] : pending_) {
        if (pend.empty() || pend.front().at + config_.pending_deadline >= env_.now()) continue;
        for (auto it = pend.rbegin(); it != pend.rend(); ++it) {
            --pending_refs_[it->entry.blknum];
            seen_.erase({uid, it->entry.nonce, it->entry.count});
            unapply(UndoStep{it->entry.op, uid, it->entry});
            rolled_back_.push_back(*it);
        }
        ++stats_.rollbacks;
        env_.trace(name_, "rollback", "uid=" + std::to_string(uid) + " ops=" + std::to_string(pend.size()));
        pend.clear();
    }
}

std::size_t StorageServer::pending_count(PrincipalId uid) const
{
    auto it = pending_.find(uid);
    return it == pending_.end() ? 0 : it->second.size();
}

std::size_t StorageServer::pending_total() const
{
    std::size_t n = 0;
    for (const auto& [uid, p] : pending_) n += p.size();
    return n;
}

std::size_t StorageServer::retained_request_signatures() const
{
    std::size_t n = retained_singles_.size();
    for (const auto& b : retained_batches_) n += b.entries.size();
    return n;
}

ServerEvidence StorageServer::evidence() const
{
    ServerEvidence ev;
    ev.request_batches = retained_batches_;
    ev.request_singles = retained_singles_;
    for (const auto& [uid, p] : pending_) ev.pending.insert(ev.pending.end(), p.begin(), p.end());
    ev.charged = tree_.snapshot();
    ev.last_signed_root = last_root_;
    ev.rolled_back = rolled_back_;
    return ev;
}

void StorageServer::drop_block(const Digest& blknum)
{
    blocks_.erase(blknum);
    env_.trace(name_, "fault-drop", blknum.short_hex());
}

void StorageServer::forge_charge(const Digest& blknum, PrincipalId owner)
{
    tree_.apply(blknum, owner, 1);
    env_.trace(name_, "fault-forge-charge", blknum.short_hex() + " owner=" + std::to_string(owner));
}

}  // namespace safius
