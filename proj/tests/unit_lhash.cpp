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
#include "safius/harness.hpp"
#include "safius/lhash_server.hpp"
#include "safius/messages.hpp"
#include "test_util.hpp"

using namespace safius;

namespace {

// Lock tables are driven directly with node ids that have no registered
// client, so revoke callbacks go nowhere.
constexpr FsId kA = 50, kB = 51;
const InodeNumber kShared{9, 1, 100};  // owned by uid 1, group 2 = {1,2}

struct Fixture {
    Deployment d{default_deployment(), 3};
    LhashServer& l = *d.lhash;
    Fixture()
    {
        d.format();
        l.fgrp_assign(kShared, 2);
    }
    StoreInodeDataMsg sid(FsId fs, InodeNumber ino, const std::string& tag)
    {
        return StoreInodeDataMsg{l.last_txid(fs) + 1, {{ino, Idata{digest(tag), 0}}}};
    }
};

}  // namespace

TEST_SUITE("lhash_server")
{
    TEST_CASE("shared locks coexist and exclusive waits its turn")
    {
        Fixture f;
        CHECK(f.l.acquire_lock(kA, 1, kShared, LockMode::Shared).granted);
        CHECK(f.l.acquire_lock(kB, 2, kShared, LockMode::Shared).granted);
        CHECK_FALSE(f.l.acquire_lock(kB, 2, kShared, LockMode::Exclusive).granted);
        CHECK(f.l.held(kB, kShared) == LockMode::Shared);
        f.l.release_lock(kA, kShared);
        CHECK(f.l.held(kB, kShared) == LockMode::Exclusive);
        CHECK_FALSE(f.l.acquire_lock(kA, 1, kShared, LockMode::Shared).granted);
        f.l.downgrade_lock(kB, kShared);
        CHECK(f.l.held(kA, kShared) == LockMode::Shared);
        CHECK(f.l.held(kB, kShared) == LockMode::Shared);
    }

    TEST_CASE("waiters are served in order")
    {
        Fixture f;
        REQUIRE(f.l.acquire_lock(kA, 1, kShared, LockMode::Exclusive).granted);
        CHECK_FALSE(f.l.acquire_lock(kB, 2, kShared, LockMode::Exclusive).granted);
        CHECK_FALSE(f.l.acquire_lock(52, 1, kShared, LockMode::Shared).granted);
        f.l.release_lock(kA, kShared);
        CHECK(f.l.held(kB, kShared) == LockMode::Exclusive);
        CHECK_FALSE(f.l.held(52, kShared).has_value());
        f.l.release_lock(kB, kShared);
        CHECK(f.l.held(52, kShared) == LockMode::Shared);
    }

    TEST_CASE("lock access follows the filegroup")
    {
        Fixture f;
        CHECK(errc_of([&] { f.l.acquire_lock(kA, 3, kShared, LockMode::Exclusive); }) == Errc::PermissionDenied);
        CHECK(errc_of([&] { f.l.acquire_lock(kA, 3, kShared, LockMode::Shared); }) == Errc::PermissionDenied);
        CHECK(f.l.acquire_lock(kA, 2, kShared, LockMode::Exclusive).granted);
    }

    TEST_CASE("waiters time out")
    {
        Fixture f;
        REQUIRE(f.l.acquire_lock(kA, 1, kShared, LockMode::Exclusive).granted);
        CHECK_FALSE(f.l.acquire_lock(kB, 2, kShared, LockMode::Exclusive).granted);
        f.d.env.advance(LhashConfig{}.deadlock_timeout + 1);
        f.l.tick();
        CHECK(f.l.locks().at(kShared).waiters.empty());
        f.l.release_lock(kA, kShared);
        CHECK_FALSE(f.l.held(kB, kShared).has_value());
    }

    TEST_CASE("i-tbl updates need the exclusive lock and the next txid")
    {
        Fixture f;
        CHECK(errc_of([&] { f.l.store_inode_data(kA, 1, f.sid(kA, kShared, "v1")); }) == Errc::LockNotHeld);
        REQUIRE(f.l.acquire_lock(kA, 1, kShared, LockMode::Exclusive).granted);
        auto m1 = f.sid(kA, kShared, "v1");
        CHECK(f.l.store_inode_data(kA, 1, m1) == 1);
        CHECK(f.l.idata(kShared) == Idata{digest("v1"), 1});
        auto m2 = f.sid(kA, kShared, "v2");
        f.l.store_inode_data(kA, 1, m2);
        CHECK(f.l.idata(kShared)->incarnation == 2);
        // a retransmitted commit is acknowledged without effect
        CHECK(f.l.store_inode_data(kA, 1, m1) == 1);
        CHECK(f.l.idata(kShared)->inode_hash == digest("v2"));
        CHECK(f.l.stats().replays == 1);
        StoreInodeDataMsg gap{f.l.last_txid(kA) + 2, {{kShared, Idata{digest("v3"), 0}}}};
        CHECK(errc_of([&] { f.l.store_inode_data(kA, 1, gap); }) == Errc::StaleTxid);
        CHECK(errc_of([&] { f.l.store_inode_data(kA, 3, f.sid(kA, kShared, "v3")); }) == Errc::PermissionDenied);
    }

    TEST_CASE("restart recovers the i-tbl, txids and locks")
    {
        Fixture f;
        REQUIRE(f.l.acquire_lock(kA, 1, kShared, LockMode::Exclusive).granted);
        f.l.store_inode_data(kA, 1, f.sid(kA, kShared, "v1"));
        auto before = f.l.itbl();
        Digest fg = f.l.current_fgrphash();
        f.l.restart();
        CHECK(f.l.itbl() == before);
        CHECK(f.l.last_txid(kA) == 1);
        CHECK(f.l.held(kA, kShared) == LockMode::Exclusive);
        CHECK(f.l.current_fgrphash() == fg);
        f.l.checkpoint();
        f.l.store_inode_data(kA, 1, f.sid(kA, kShared, "v2"));
        f.l.restart();
        CHECK(f.l.idata(kShared) == Idata{digest("v2"), 2});
    }

    TEST_CASE("filegroup registration is owner-only and changes the hash")
    {
        Fixture f;
        InodeNumber fresh{9, 2, 7};
        CHECK(errc_of([&] { f.l.fgrp_register(1, fresh, 2); }) == Errc::PermissionDenied);
        CHECK(errc_of([&] { f.l.fgrp_register(2, fresh, 99); }) == Errc::InvalidArgument);
        Digest h0 = f.l.current_fgrphash();
        f.l.fgrp_register(2, fresh, 3);
        CHECK(f.l.current_fgrphash() != h0);
        auto rec = f.l.fgrp_record(fresh);
        REQUIRE(rec.has_value());
        CHECK(rec->fgrp == 3);
        CHECK(rec->writers == std::set<PrincipalId>{2, 3});
        CHECK(f.l.fgrp_lookup(fresh) == FgrpId{3});
        CHECK_FALSE(f.l.fgrp_record(InodeNumber{9, 9, 9}).has_value());
    }

    TEST_CASE("grants are checked before they enter the vault")
    {
        Fixture f;
        RequestBatch b;
        b.header = BatchHeader{1, 0};
        b.sig = f.d.keys.sign(1, payload_digest(b));
        GrantBatch g{b, f.l.current_fgrphash(), {}};
        g.sig = f.d.keys.sign(1, payload_digest(g));
        std::size_t before = f.l.vault_records();
        CHECK(errc_of([&] { f.l.persist_grant(1, g); }) == Errc::BadSignature);
        g.sig = f.d.keys.sign(kStorageServerPrincipal, payload_digest(g));
        CHECK(errc_of([&] { f.l.persist_grant(2, g); }) == Errc::BadSignature);
        CHECK(f.l.vault_records() == before);
        f.l.persist_grant(1, g);
        CHECK(f.l.has_grant(payload_digest(b)));
    }

    TEST_CASE("prune agrees and shrinks the vault")
    {
        Fixture f;
        Fileserver& fs = f.d.fs(1);
        for (int i = 0; i < 30; ++i)
            fs.vm().vm_write(to_bytes("block " + std::to_string(i)), InodeNumber{1, 1, kScratchSeq}, 1, 1);
        f.d.quiesce();
        CHECK(f.l.vault_records() > 0);
        CHECK(f.l.refcnt_tree().root() == f.d.ss.refcnt_tree().root());
        PruneResult r = f.l.lhash_prune_round();
        CHECK(r.agreed);
        CHECK(f.l.vault_records() == 0);
        CHECK(r.evidence_after == f.l.refcnt_tree().leaves() + 1);
        PruneResult again = f.l.lhash_prune_round();
        CHECK(again.agreed);
        CHECK(again.evidence_after == r.evidence_after);
        REQUIRE(f.l.last_signed_root().has_value());
        CHECK(f.l.last_signed_root()->root == f.l.refcnt_tree().root());
    }
}
