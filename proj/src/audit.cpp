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


#include "safius/audit.hpp"

#include <set>

namespace safius {

const char* dispute_kind_name(DisputeKind k)
{
    switch (k) {
    case DisputeKind::LoadMiss: return "LoadMiss";
    case DisputeKind::UnsolicitedStore: return "UnsolicitedStore";
    case DisputeKind::RefcntMismatch: return "RefcntMismatch";
    case DisputeKind::GrantRefusal: return "GrantRefusal";
    case DisputeKind::BadBlockBytes: return "BadBlockBytes";
    }
    return "?";
}

std::string verdict_str(const Verdict& v)
{
    std::string s;
    switch (v.guilty) {
    case Party::NoViolation: s = "NoViolation"; break;
    case Party::StorageServer: s = "StorageServer"; break;
    case Party::Fileserver: s = "Fileserver(" + std::to_string(v.uid) + ")"; break;
    }
    if (v.insufficient_evidence) s += " [InsufficientEvidence]";
    return s;
}

Evidence collect_evidence(const LhashServer& lhash, const StorageServer& ss)
{
    Evidence ev;
    ev.vault_batches = lhash.vault_batches();
    ev.vault_singles = lhash.vault_singles();
    ev.agreed_leaves = lhash.agreed_leaves();
    ev.signed_root = lhash.last_signed_root();
    ev.lhash_counts = lhash.refcnt_tree().snapshot();
    ev.server = ss.evidence();
    return ev;
}

namespace {

bool counts_equal(const UidCounts* a, const UidCounts& b)
{
    UidCounts x = a ? *a : UidCounts{};
    UidCounts y = b;
    std::erase_if(x, [](const auto& p) { return p.second == 0; });
    std::erase_if(y, [](const auto& p) { return p.second == 0; });
    return x == y;
}

std::int64_t sum(const UidCounts& c)
{
    std::int64_t s = 0;
    for (const auto& [u, n] : c) s += n;
    return s;
}

const UidCounts* find_counts(const std::map<Digest, UidCounts>& m, const Digest& k)
{
    auto it = m.find(k);
    return it == m.end() ? nullptr : &it->second;
}

bool agreed_root_valid(const Evidence& ev, const KeyRegistry& keys)
{
    if (!ev.signed_root) return false;
    if (!keys.verify(kStorageServerPrincipal, payload_digest(*ev.signed_root), ev.signed_root->sig)) return false;
    RefcntTree t;
    for (const auto& [blk, c] : ev.agreed_leaves)
        for (const auto& [u, n] : c) t.apply(blk, u, n);
    return t.root() == ev.signed_root->root;
}

}  // namespace

BackedCounts backed_counts(const Evidence& ev, const KeyRegistry& keys, const Digest& blknum)
{
    BackedCounts out;
    if (agreed_root_valid(ev, keys)) {
        if (const UidCounts* c = find_counts(ev.agreed_leaves, blknum)) {
            for (const auto& [u, n] : *c) {
                out.total[u] += n;
                out.self_signed[u] += n;
                out.client_held[u] += n;
            }
            out.any_store = true;
        }
    }
    std::set<Digest> seen;
    auto add_entry = [&](PrincipalId signer, const BatchEntry& e, bool from_server) {
        if (e.blknum != blknum) return;
        std::int64_t delta = e.op == OpKind::Store ? 1 : -1;
        PrincipalId owner = e.ino.owner_uid;
        out.total[owner] += delta;
        if (!from_server || e.op == OpKind::Free) out.client_held[owner] += delta;
        if (signer == owner) out.self_signed[owner] += delta;
        if (e.op == OpKind::Store) out.any_store = true;
    };
    auto add_batch = [&](const RequestBatch& b, bool from_server) {
        Digest pd = payload_digest(b);
        if (!seen.insert(pd).second) return;
        if (b.sig.signer != b.header.uid || !keys.verify(b.header.uid, pd, b.sig)) return;
        for (const auto& e : b.entries) add_entry(b.header.uid, e, from_server);
    };
    auto add_single = [&](const SignedRequest& r, bool from_server) {
        Digest pd = payload_digest(r.req);
        if (!seen.insert(pd).second) return;
        if (r.sig.signer != r.req.uid || !keys.verify(r.req.uid, pd, r.sig)) return;
        add_entry(r.req.uid, to_entry(r.req), from_server);
    };
    for (const auto& g : ev.vault_batches)
        if (keys.verify(kStorageServerPrincipal, payload_digest(g), g.sig)) add_batch(g.inner, false);
    for (const auto& [r, g] : ev.vault_singles)
        if (keys.verify(kStorageServerPrincipal, payload_digest(g), g.sig)) add_single(r, false);
    for (const auto& b : ev.server.request_batches) add_batch(b, true);
    for (const auto& r : ev.server.request_singles) add_single(r, true);
    return out;
}

namespace {

bool in_window(const Evidence& ev, const Digest& blknum)
{
    for (const auto& p : ev.server.pending)
        if (p.entry.blknum == blknum) return true;
    for (const auto& p : ev.server.rolled_back)
        if (p.entry.blknum == blknum) return true;
    return false;
}

Verdict insufficient(std::string why)
{
    return Verdict{Party::NoViolation, 0, true, std::move(why)};
}

}  // namespace

Verdict resolve(const Dispute& d, const Evidence& ev, const KeyRegistry& keys)
{
    switch (d.kind) {
    case DisputeKind::BadBlockBytes:
        if (digest(d.returned_bytes) != d.blknum)
            return Verdict{Party::StorageServer, 0, false, "returned bytes do not hash to " + d.blknum.short_hex()};
        return Verdict{Party::NoViolation, 0, false, "returned bytes match their name"};

    case DisputeKind::GrantRefusal:
        return insufficient("no grant was issued; the ops remain in the unsigned window");

    case DisputeKind::LoadMiss: {
        BackedCounts b = backed_counts(ev, keys, d.blknum);
        std::int64_t n = sum(b.client_held);
        if (n > 0)
            return Verdict{Party::StorageServer, 0, false,
                           "signed history leaves " + std::to_string(n) + " live references to " + d.blknum.short_hex()};
        if (b.any_store) return Verdict{Party::NoViolation, 0, false, "signed frees cancel every signed store"};
        return insufficient(in_window(ev, d.blknum) ? "store only in the unsigned window" : "no signed store on record");
    }

    case DisputeKind::UnsolicitedStore: {
        BackedCounts b = backed_counts(ev, keys, d.blknum);
        const UidCounts* charged = find_counts(ev.server.charged, d.blknum);
        std::int64_t s = 0;
        if (charged)
            if (auto it = charged->find(d.uid); it != charged->end()) s = it->second;
        std::int64_t backed = b.total.count(d.uid) ? b.total.at(d.uid) : 0;
        std::int64_t self = b.self_signed.count(d.uid) ? b.self_signed.at(d.uid) : 0;
        if (s > backed) {
            if (in_window(ev, d.blknum)) return insufficient("excess charge overlaps the unsigned window");
            return Verdict{Party::StorageServer, 0, false,
                           "charged " + std::to_string(s) + " but only " + std::to_string(backed) + " signed"};
        }
        if (self > 0)
            return Verdict{Party::Fileserver, d.uid, false, "the server holds uid's own request signature for the store"};
        if (s == 0 && in_window(ev, d.blknum)) return insufficient("the store is still in the unsigned window");
        return Verdict{Party::NoViolation, 0, false, "charge backed by a co-writer's signed store"};
    }

    case DisputeKind::RefcntMismatch: {
        BackedCounts b = backed_counts(ev, keys, d.blknum);
        bool server_ok = counts_equal(find_counts(ev.server.charged, d.blknum), b.total);
        bool lhash_ok = counts_equal(find_counts(ev.lhash_counts, d.blknum), b.total);
        if (!server_ok && lhash_ok)
            return Verdict{Party::StorageServer, 0, false, "server count for " + d.blknum.short_hex() + " lacks signatures"};
        if (server_ok && !lhash_ok)
            return Verdict{Party::NoViolation, 0, false, "l-hash is missing grants the server can show"};
        return insufficient("neither side's count matches the signed history");
    }
    }
    return insufficient("unknown dispute");
}

}  // namespace safius
