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


#include <random>

#include "doctest.h"
#include "safius/env.hpp"
#include "safius/messages.hpp"
#include "safius/storage_server.hpp"
#include "test_util.hpp"

using namespace safius;

namespace {

struct StubDirectory : FgrpDirectory {
    std::map<InodeNumber, FgrpRecord> records;
    Digest current_fgrphash() const override { return digest("fgrp-" + std::to_string(records.size())); }
    std::optional<FgrpRecord> fgrp_record(InodeNumber ino) const override
    {
        auto it = records.find(ino);
        if (it == records.end()) return std::nullopt;
        return it->second;
    }
};

struct Fixture {
    Env env;
    KeyRegistry keys;
    StubDirectory dir;
    StorageServer ss;
    Nonce nonce = 99;
    std::uint64_t count = 0;

    explicit Fixture(ServerConfig cfg = {}) : ss(env, make_keys(keys), cfg)
    {
        ss.attach_directory(&dir);
        for (PrincipalId u : {1u, 2u, 3u}) ss.open_session(SessionNonce{nonce + u, u});
    }

    static const KeyRegistry& make_keys(KeyRegistry& k)
    {
        for (PrincipalId u : {1u, 2u, 3u}) k.generate(u, 5);
        k.generate(kStorageServerPrincipal, 5);
        return k;
    }

    BatchEntry entry(PrincipalId uid, const Bytes& data, InodeNumber ino, OpKind op = OpKind::Store)
    {
        return BatchEntry{digest(data), ino, op, nonce + uid, ++count};
    }

    RequestBatch batch(PrincipalId uid, std::vector<BatchEntry> entries)
    {
        RequestBatch b;
        b.header = BatchHeader{uid, static_cast<std::uint32_t>(entries.size())};
        b.entries = std::move(entries);
        b.sig = keys.sign(uid, payload_digest(b));
        return b;
    }
};

const InodeNumber kIno1{1, 1, 10};
const InodeNumber kIno2{2, 2, 20};

}  // namespace

TEST_SUITE("storage_server")
{
    TEST_CASE("unsigned store is servable and pending until granted")
    {
        Fixture f;
        Bytes data = to_bytes("block one");
        BatchEntry e = f.entry(1, data, kIno1);
        f.ss.handle_store(data, e, 1);
        CHECK(f.ss.load(e.blknum) == data);
        CHECK(f.ss.pending_count(1) == 1);
        CHECK(f.ss.refcnt_tree().count(e.blknum, 1) == 0);

        GrantBatch g = f.ss.verify_and_grant(f.batch(1, {e}), {});
        CHECK(f.ss.pending_count(1) == 0);
        CHECK(f.ss.refcnt_tree().count(e.blknum, 1) == 1);
        CHECK(f.keys.verify(kStorageServerPrincipal, payload_digest(g), g.sig));
        CHECK(g.fgrphash == f.dir.current_fgrphash());
        CHECK(f.ss.retained_request_signatures() == 1);
    }

    TEST_CASE("a repeated batch returns the same grant")
    {
        Fixture f;
        Bytes data = to_bytes("x");
        BatchEntry e = f.entry(1, data, kIno1);
        f.ss.handle_store(data, e, 1);
        RequestBatch b = f.batch(1, {e});
        GrantBatch g1 = f.ss.verify_and_grant(b, {});
        GrantBatch g2 = f.ss.verify_and_grant(b, {});
        CHECK(g1 == g2);
        CHECK(f.ss.stats().grants == 1);
        CHECK(f.ss.refcnt_tree().count(e.blknum, 1) == 1);
    }

    TEST_CASE("stores are checked against their name")
    {
        Fixture f;
        BatchEntry e = f.entry(1, to_bytes("claimed"), kIno1);
        CHECK(errc_of([&] { f.ss.handle_store(to_bytes("actual"), e, 1); }) == Errc::DigestMismatch);
        CHECK(f.ss.blocks().empty());
    }

    TEST_CASE("replays and unknown sessions are refused")
    {
        Fixture f;
        Bytes data = to_bytes("r");
        BatchEntry e = f.entry(1, data, kIno1);
        f.ss.handle_store(data, e, 1);
        CHECK(errc_of([&] { f.ss.handle_store(data, e, 1); }) == Errc::Replay);
        BatchEntry bad = e;
        bad.nonce = 12345;
        bad.count = 777;
        CHECK(errc_of([&] { f.ss.handle_store(data, bad, 1); }) == Errc::AccessDenied);
        CHECK(errc_of([&] { f.ss.open_session(SessionNonce{f.nonce + 1, 1}); }) == Errc::Replay);
    }

    TEST_CASE("write access follows the filegroup record")
    {
        Fixture f;
        Bytes data = to_bytes("shared");
        CHECK(errc_of([&] { f.ss.handle_store(data, f.entry(3, data, kIno2), 3); }) == Errc::AccessDenied);
        f.dir.records[kIno2] = FgrpRecord{7, {2, 3}, {2, 3}, 1};
        f.ss.handle_store(data, f.entry(3, data, kIno2), 3);
        CHECK(f.ss.blocks().at(digest(data)).refs.at(kIno2) == 1);
        CHECK(errc_of([&] { f.ss.handle_store(data, f.entry(1, data, kIno2), 1); }) == Errc::AccessDenied);
    }

    TEST_CASE("a batch must cover every pending op")
    {
        Fixture f;
        Bytes a = to_bytes("a"), b = to_bytes("b");
        BatchEntry ea = f.entry(1, a, kIno1), eb = f.entry(1, b, kIno1);
        f.ss.handle_store(a, ea, 1);
        f.ss.handle_store(b, eb, 1);
        CHECK(errc_of([&] { f.ss.verify_and_grant(f.batch(1, {ea}), {}); }) == Errc::Reject);
        CHECK(f.ss.pending_count(1) == 2);
        CHECK(f.ss.last_reject().has_value());
        f.ss.verify_and_grant(f.batch(1, {ea, eb}), {});
        CHECK(f.ss.pending_count(1) == 0);
    }

    TEST_CASE("a batch that differs from what ran is refused")
    {
        Fixture f;
        Bytes a = to_bytes("a");
        BatchEntry ea = f.entry(1, a, kIno1);
        f.ss.handle_store(a, ea, 1);
        BatchEntry lie = ea;
        lie.ino = InodeNumber{1, 1, 11};
        CHECK(errc_of([&] { f.ss.verify_and_grant(f.batch(1, {lie}), {}); }) == Errc::Reject);
    }

    TEST_CASE("bad signatures and header counts are refused")
    {
        Fixture f;
        Bytes a = to_bytes("a");
        BatchEntry ea = f.entry(1, a, kIno1);
        f.ss.handle_store(a, ea, 1);
        RequestBatch b = f.batch(1, {ea});
        b.sig = f.keys.sign(2, payload_digest(b));
        CHECK(errc_of([&] { f.ss.verify_and_grant(b, {}); }) == Errc::Reject);
        RequestBatch c = f.batch(1, {ea});
        c.header.count = 2;
        CHECK(errc_of([&] { f.ss.verify_and_grant(c, {}); }) == Errc::Reject);
    }

    TEST_CASE("grant is all or nothing")
    {
        Fixture f;
        Bytes a = to_bytes("sent later a"), b = to_bytes("never sent");
        BatchEntry ea = f.entry(1, a, kIno1), eb = f.entry(1, b, kIno1);
        std::map<Digest, Bytes> data{{ea.blknum, a}};
        CHECK(errc_of([&] { f.ss.verify_and_grant(f.batch(1, {ea, eb}), data); }) == Errc::Reject);
        CHECK(f.ss.blocks().empty());
        CHECK(f.ss.refcnt_tree().leaves() == 0);
        data[eb.blknum] = b;
        f.ss.verify_and_grant(f.batch(1, {ea, eb}), data);
        CHECK(f.ss.blocks().size() == 2);
    }

    TEST_CASE("pending ops past the deadline are rolled back")
    {
        ServerConfig cfg;
        cfg.pending_deadline = 100;
        Fixture f(cfg);
        Bytes a = to_bytes("a");
        BatchEntry ea = f.entry(1, a, kIno1);
        f.ss.handle_store(a, ea, 1);
        f.env.advance(50);
        f.ss.tick();
        CHECK(f.ss.pending_count(1) == 1);
        f.env.advance(100);
        f.ss.tick();
        CHECK(f.ss.pending_count(1) == 0);
        CHECK(errc_of([&] { f.ss.load(ea.blknum); }) == Errc::NotFound);
        CHECK(f.ss.evidence().rolled_back.size() == 1);
        CHECK(f.ss.stats().rollbacks == 1);
    }

    TEST_CASE("free releases the reference and reclaims the block")
    {
        Fixture f;
        Bytes a = to_bytes("a");
        BatchEntry s = f.entry(1, a, kIno1);
        f.ss.handle_store(a, s, 1);
        f.ss.verify_and_grant(f.batch(1, {s}), {});
        BatchEntry fr = f.entry(1, a, kIno1, OpKind::Free);
        f.ss.handle_free(fr, 1);
        CHECK(errc_of([&] { f.ss.load(s.blknum); }) == Errc::NotFound);
        f.ss.verify_and_grant(f.batch(1, {fr}), {});
        CHECK(f.ss.refcnt_tree().leaves() == 0);
        CHECK(f.ss.blocks().empty());
        CHECK(errc_of([&] { f.ss.handle_free(f.entry(1, a, kIno1, OpKind::Free), 1); }) == Errc::NoSuchReference);
    }

    TEST_CASE("signed single path")
    {
        ServerConfig cfg;
        Fixture f(cfg);
        Bytes a = to_bytes("sync");
        RequestSingle r{digest(a), kIno1, 1, OpKind::Store, f.nonce + 1, 1};
        SignedRequest sr{r, f.keys.sign(1, payload_digest(r))};
        GrantSingle g = f.ss.handle_signed(sr, a);
        CHECK(f.keys.verify(kStorageServerPrincipal, payload_digest(g), g.sig));
        CHECK(f.ss.refcnt_tree().count(r.blknum, 1) == 1);
        CHECK(f.ss.handle_signed(sr, a) == g);
        SignedRequest forged{r, f.keys.sign(2, payload_digest(r))};
        forged.req.count = 2;
        CHECK(errc_of([&] { f.ss.handle_signed(forged, a); }) == Errc::BadSignature);
    }

    TEST_CASE("co-writer stores charge the owner and the requester ledger")
    {
        Fixture f;
        f.dir.records[kIno2] = FgrpRecord{7, {2, 3}, {2, 3}, 1};
        Bytes a = to_bytes("a");
        BatchEntry e = f.entry(3, a, kIno2);
        f.ss.handle_store(a, e, 3);
        f.ss.verify_and_grant(f.batch(3, {e}), {});
        CHECK(f.ss.refcnt_tree().count(e.blknum, 2) == 1);
        CHECK(f.ss.refcnt_tree().count(e.blknum, 3) == 0);
        CHECK(f.ss.per_uid(e.blknum) == std::map<PrincipalId, std::int64_t>{{3, 1}});
    }

    TEST_CASE("prune agrees on a matching tree and localises a mismatch")
    {
        Fixture f;
        RefcntTree mirror;
        std::vector<BatchEntry> es;
        for (int i = 0; i < 20; ++i) {
            Bytes d = to_bytes("blk" + std::to_string(i));
            es.push_back(f.entry(1, d, kIno1));
            f.ss.handle_store(d, es.back(), 1);
            mirror.apply(es.back().blknum, 1, 1);
        }
        f.ss.verify_and_grant(f.batch(1, es), {});
        auto r = f.ss.server_prune_round(mirror.root(), mirror);
        REQUIRE(std::holds_alternative<SignedRoot>(r));
        const auto& sr = std::get<SignedRoot>(r);
        CHECK(sr.root == mirror.root());
        CHECK(f.keys.verify(kStorageServerPrincipal, payload_digest(sr), sr.sig));
        CHECK(f.ss.retained_request_signatures() == 0);

        RefcntTree off = mirror;
        off.apply(es[13].blknum, 1, 1);
        auto m = f.ss.server_prune_round(off.root(), off);
        REQUIRE(std::holds_alternative<PruneMismatch>(m));
        CHECK(std::get<PruneMismatch>(m).blknum == es[13].blknum);
    }

    TEST_CASE("byzantine controls")
    {
        Fixture f;
        Bytes a = to_bytes("payload bytes");
        BatchEntry e = f.entry(1, a, kIno1);
        f.ss.handle_store(a, e, 1);
        f.ss.faults().corrupt_on_load[e.blknum] = 3;
        Bytes got = f.ss.load(e.blknum);
        CHECK(got != a);
        got[0] ^= 0x08;
        CHECK(got == a);
        f.ss.faults().corrupt_on_load.clear();
        f.ss.faults().report_not_found.insert(e.blknum);
        CHECK(errc_of([&] { f.ss.load(e.blknum); }) == Errc::NotFound);
        f.ss.faults().report_not_found.clear();
        f.ss.faults().refuse_grant_for.insert(1);
        CHECK(errc_of([&] { f.ss.verify_and_grant(f.batch(1, {e}), {}); }) == Errc::Reject);
        f.ss.drop_block(e.blknum);
        CHECK(errc_of([&] { f.ss.load(e.blknum); }) == Errc::NotFound);
    }

    TEST_CASE("property: tree equals the replay of granted ops")
    {
        Fixture f;
        f.dir.records[kIno2] = FgrpRecord{7, {1, 2}, {1, 2}, 1};
        std::mt19937_64 rng(8);
        std::map<Digest, UidCounts> model;
        std::map<std::pair<Digest, InodeNumber>, int> live;
        std::vector<Bytes> pool;
        for (int i = 0; i < 12; ++i) pool.push_back(random_bytes(rng, 16));
        for (int round = 0; round < 40; ++round) {
            PrincipalId uid = 1 + rng() % 2;
            std::vector<BatchEntry> es;
            for (int k = 0; k < 10; ++k) {
                const Bytes& d = pool[rng() % pool.size()];
                InodeNumber ino = rng() % 2 ? kIno2 : (uid == 1 ? kIno1 : kIno2);
                auto key = std::make_pair(digest(d), ino);
                if (live[key] > 0 && rng() % 2) {
                    es.push_back(f.entry(uid, d, ino, OpKind::Free));
                    f.ss.handle_free(es.back(), uid);
                    --live[key];
                    if (--model[key.first][ino.owner_uid] == 0) model[key.first].erase(ino.owner_uid);
                    if (model[key.first].empty()) model.erase(key.first);
                } else {
                    es.push_back(f.entry(uid, d, ino));
                    f.ss.handle_store(d, es.back(), uid);
                    ++live[key];
                    ++model[key.first][ino.owner_uid];
                }
            }
            f.ss.verify_and_grant(f.batch(uid, es), {});
        }
        CHECK(f.ss.refcnt_tree().snapshot() == model);
        CHECK(f.ss.pending_total() == 0);
    }
}
