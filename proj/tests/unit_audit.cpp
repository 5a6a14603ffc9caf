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


#include "doctest.h"
#include "safius/audit.hpp"
#include "safius/messages.hpp"
#include "test_util.hpp"

using namespace safius;

namespace {

const Digest kBlk = digest("the block");
const InodeNumber kOwn1{1, 1, 5};  // owner uid 1
const InodeNumber kOwn2{2, 2, 6};  // owner uid 2

struct World {
    KeyRegistry keys;
    Evidence ev;
    std::uint64_t count = 0;
    World()
    {
        for (PrincipalId u : {1u, 2u, 3u}) keys.generate(u, 1);
        keys.generate(kStorageServerPrincipal, 1);
    }
    BatchEntry e(InodeNumber ino, OpKind op) { return BatchEntry{kBlk, ino, op, 1, ++count}; }
    RequestBatch batch(PrincipalId uid, std::vector<BatchEntry> es, PrincipalId signer = 0)
    {
        RequestBatch b;
        b.header = BatchHeader{uid, static_cast<std::uint32_t>(es.size())};
        b.entries = std::move(es);
        b.sig = keys.sign(signer ? signer : uid, payload_digest(b));
        return b;
    }
    GrantBatch grant(const RequestBatch& b, PrincipalId signer = kStorageServerPrincipal)
    {
        GrantBatch g{b, digest("fg"), {}};
        g.sig = keys.sign(signer, payload_digest(g));
        return g;
    }
    void vault(PrincipalId uid, std::vector<BatchEntry> es) { ev.vault_batches.push_back(grant(batch(uid, std::move(es)))); }
    void server_holds(PrincipalId uid, std::vector<BatchEntry> es) { ev.server.request_batches.push_back(batch(uid, std::move(es))); }
    void charge(PrincipalId uid, std::int64_t n) { ev.server.charged[kBlk][uid] = n; }
    void lhash_count(PrincipalId uid, std::int64_t n) { ev.lhash_counts[kBlk][uid] = n; }
    void pending(PrincipalId uid, InodeNumber ino) { ev.server.pending.push_back(PendingOp{uid, e(ino, OpKind::Store), 0}); }
    void agree(std::map<Digest, UidCounts> leaves, bool tamper = false)
    {
        RefcntTree t;
        for (const auto& [b, c] : leaves)
            for (const auto& [u, n] : c) t.apply(b, u, n);
        SignedRoot sr{t.root(), 1, {}};
        sr.sig = keys.sign(kStorageServerPrincipal, payload_digest(sr));
        ev.signed_root = sr;
        if (tamper) leaves[kBlk][1] += 5;
        ev.agreed_leaves = std::move(leaves);
    }
    std::string judge(DisputeKind k, PrincipalId uid = 0)
    {
        Dispute d;
        d.kind = k;
        d.blknum = kBlk;
        d.uid = uid;
        return verdict_str(resolve(d, ev, keys));
    }
};

const std::string kServer = "StorageServer";
const std::string kClean = "NoViolation";
const std::string kGap = "NoViolation [InsufficientEvidence]";

}  // namespace

TEST_SUITE("audit")
{
    TEST_CASE("bad bytes")
    {
        World w;
        Dispute d;
        d.kind = DisputeKind::BadBlockBytes;
        d.returned_bytes = to_bytes("honest");
        d.blknum = digest("honest");
        CHECK(verdict_str(resolve(d, w.ev, w.keys)) == kClean);
        d.returned_bytes[0] ^= 1;
        CHECK(verdict_str(resolve(d, w.ev, w.keys)) == kServer);
    }

    TEST_CASE("a refused grant leaves nothing to judge")
    {
        World w;
        CHECK(w.judge(DisputeKind::GrantRefusal) == kGap);
    }

    TEST_CASE("load miss")
    {
        SUBCASE("vaulted store with no free blames the server")
        {
            World w;
            w.vault(1, {w.e(kOwn1, OpKind::Store)});
            CHECK(w.judge(DisputeKind::LoadMiss) == kServer);
        }
        SUBCASE("a signed free cancels the store")
        {
            World w;
            w.vault(1, {w.e(kOwn1, OpKind::Store)});
            w.server_holds(1, {w.e(kOwn1, OpKind::Free)});
            CHECK(w.judge(DisputeKind::LoadMiss) == kClean);
        }
        SUBCASE("a store the server alone can show does not convict it")
        {
            World w;
            w.server_holds(1, {w.e(kOwn1, OpKind::Store)});
            CHECK(w.judge(DisputeKind::LoadMiss) == kClean);
        }
        SUBCASE("no signed store at all")
        {
            World w;
            CHECK(w.judge(DisputeKind::LoadMiss) == kGap);
            w.pending(1, kOwn1);
            CHECK(w.judge(DisputeKind::LoadMiss) == kGap);
        }
        SUBCASE("grants without a valid server signature are ignored")
        {
            World w;
            w.ev.vault_batches.push_back(w.grant(w.batch(1, {w.e(kOwn1, OpKind::Store)}), 2));
            CHECK(w.judge(DisputeKind::LoadMiss) == kGap);
        }
        SUBCASE("requests signed by someone else are ignored")
        {
            World w;
            w.ev.vault_batches.push_back(w.grant(w.batch(1, {w.e(kOwn1, OpKind::Store)}, 3)));
            CHECK(w.judge(DisputeKind::LoadMiss) == kGap);
        }
        SUBCASE("agreed leaves count once the root checks out")
        {
            World w;
            w.agree({{kBlk, {{1, 1}}}});
            CHECK(w.judge(DisputeKind::LoadMiss) == kServer);
            World t;
            t.agree({{kBlk, {{1, 1}}}}, true);
            CHECK(t.judge(DisputeKind::LoadMiss) == kGap);
        }
        SUBCASE("a batch seen twice counts once")
        {
            World w;
            RequestBatch b = w.batch(1, {w.e(kOwn1, OpKind::Store)});
            RequestBatch f = w.batch(1, {w.e(kOwn1, OpKind::Free)});
            w.ev.vault_batches.push_back(w.grant(b));
            w.ev.vault_batches.push_back(w.grant(b));
            w.ev.server.request_batches.push_back(f);
            CHECK(w.judge(DisputeKind::LoadMiss) == kClean);
        }
    }

    TEST_CASE("unsolicited store")
    {
        SUBCASE("charge above the signed count blames the server")
        {
            World w;
            w.vault(1, {w.e(kOwn1, OpKind::Store)});
            w.charge(1, 2);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == kServer);
        }
        SUBCASE("unsigned charge with nothing pending blames the server")
        {
            World w;
            w.charge(1, 1);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == kServer);
        }
        SUBCASE("excess inside the unsigned window is not decidable")
        {
            World w;
            w.charge(1, 1);
            w.pending(1, kOwn1);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == kGap);
        }
        SUBCASE("the claimant's own signature convicts the claimant")
        {
            World w;
            w.server_holds(1, {w.e(kOwn1, OpKind::Store)});
            w.charge(1, 1);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == "Fileserver(1)");
        }
        SUBCASE("a co-writer's signed store backs the charge")
        {
            World w;
            w.server_holds(3, {w.e(kOwn2, OpKind::Store)});
            w.charge(2, 1);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 2) == kClean);
        }
        SUBCASE("nothing charged and nothing pending")
        {
            World w;
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == kClean);
            w.pending(1, kOwn1);
            CHECK(w.judge(DisputeKind::UnsolicitedStore, 1) == kGap);
        }
    }

    TEST_CASE("refcount mismatch")
    {
        SUBCASE("server wrong, l-hash right")
        {
            World w;
            w.vault(1, {w.e(kOwn1, OpKind::Store)});
            w.charge(1, 3);
            w.lhash_count(1, 1);
            CHECK(w.judge(DisputeKind::RefcntMismatch) == kServer);
        }
        SUBCASE("server right, l-hash behind")
        {
            World w;
            w.server_holds(1, {w.e(kOwn1, OpKind::Store)});
            w.charge(1, 1);
            CHECK(w.judge(DisputeKind::RefcntMismatch) == kClean);
        }
        SUBCASE("neither matches")
        {
            World w;
            w.vault(1, {w.e(kOwn1, OpKind::Store)});
            w.charge(1, 3);
            w.lhash_count(1, 2);
            CHECK(w.judge(DisputeKind::RefcntMismatch) == kGap);
        }
    }

    TEST_CASE("backed counts split by signer and holder")
    {
        World w;
        w.vault(1, {w.e(kOwn1, OpKind::Store), w.e(kOwn1, OpKind::Store)});
        w.server_holds(3, {w.e(kOwn2, OpKind::Store)});
        w.server_holds(1, {w.e(kOwn1, OpKind::Free)});
        BackedCounts b = backed_counts(w.ev, w.keys, kBlk);
        CHECK(b.total == UidCounts{{1, 1}, {2, 1}});
        CHECK(b.self_signed == UidCounts{{1, 1}});
        CHECK(b.client_held == UidCounts{{1, 1}});
        CHECK(b.any_store);
        CHECK(backed_counts(w.ev, w.keys, digest("other")).total.empty());
    }

    TEST_CASE("names")
    {
        CHECK(std::string(dispute_kind_name(DisputeKind::UnsolicitedStore)) == "UnsolicitedStore");
        CHECK(verdict_str(Verdict{Party::Fileserver, 3, false, ""}) == "Fileserver(3)");
    }
}
