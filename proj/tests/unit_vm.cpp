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
#include "safius/harness.hpp"
#include "safius/lhash_server.hpp"
#include "test_util.hpp"

using namespace safius;

namespace {

const InodeNumber kScratch{1, 1, kScratchSeq};

DeploymentConfig config(SignMode mode, std::size_t threshold)
{
    DeploymentConfig dc = default_deployment();
    dc.vm.mode = mode;
    dc.vm.threshold = threshold;
    dc.vm.timeout = 500;
    dc.server.pending_deadline = 100000;
    return dc;
}

struct Fixture {
    Deployment d;
    VolumeManager& vm;
    VmCounters base;
    explicit Fixture(SignMode mode = SignMode::Async, std::size_t threshold = 8)
        : d(config(mode, threshold), 4), vm((d.format(), d.quiesce(), d.fs(1).vm())), base(vm.counters())
    {
    }
    std::uint64_t signs() const { return vm.counters().sign_calls - base.sign_calls; }
    Digest put(const std::string& s) { return vm.vm_write(to_bytes(s), kScratch, 1, 1); }
};

bool has_event(const VolumeManager& vm, VmEvent::Kind k)
{
    for (const auto& e : vm.events())
        if (e.kind == k) return true;
    return false;
}

}  // namespace

TEST_SUITE("volume_manager")
{
    TEST_CASE("blocks are sealed, named by content and read back")
    {
        Fixture f;
        Digest a = f.put("alpha");
        CHECK(f.vm.vm_read(a, 1) == to_bytes("alpha"));
        CHECK(a == digest(f.vm.seal(to_bytes("alpha"), 1)));
        CHECK(f.put("alpha") == a);
        CHECK(digest(f.vm.seal(to_bytes("alpha"), 2)) != a);
        // the server never sees plaintext
        CHECK(f.d.ss.blocks().at(a).data != to_bytes("alpha"));
    }

    TEST_CASE("async mode signs once per threshold and never on the hot path")
    {
        Fixture f(SignMode::Async, 8);
        for (int i = 0; i < 7; ++i) f.put("b" + std::to_string(i));
        CHECK(f.signs() == 0);
        CHECK(f.vm.pending_entries() == 7);
        f.put("b7");
        CHECK(f.signs() == 1);
        CHECK(f.vm.counters().hotpath_crypto_calls == 0);
        CHECK(f.vm.counters().threshold_flushes - f.base.threshold_flushes == 1);
        CHECK_FALSE(f.vm.verified_grants().empty());
        CHECK(f.d.ss.pending_count(1) == 0);
    }

    TEST_CASE("the timer flushes an old partial batch")
    {
        Fixture f(SignMode::Async, 1000);
        f.put("lonely");
        f.vm.on_timer();
        CHECK(f.signs() == 0);
        f.d.env.advance(501);
        f.vm.on_timer();
        CHECK(f.signs() == 1);
        CHECK(f.vm.pending_entries() == 0);
    }

    TEST_CASE("sync mode signs every op")
    {
        Fixture f(SignMode::Sync, 8);
        for (int i = 0; i < 5; ++i) f.put("s" + std::to_string(i));
        CHECK(f.signs() == 5);
        CHECK(f.vm.pending_entries() == 0);
    }

    TEST_CASE("no-sign mode signs nothing")
    {
        Fixture f(SignMode::NoSign, 8);
        for (int i = 0; i < 20; ++i) f.put("n" + std::to_string(i));
        f.vm.flush_all();
        CHECK(f.signs() == 0);
    }

    TEST_CASE("corrupt bytes fail the integrity check before decryption")
    {
        Fixture f;
        Digest a = f.put("precious");
        f.d.ss.faults().corrupt_on_load[a] = 77;
        auto decrypts = f.vm.counters().decrypts;
        CHECK(errc_of([&] { f.vm.vm_read(a, 1); }) == Errc::IntegrityFailure);
        CHECK(f.vm.counters().decrypts == decrypts);
        CHECK(has_event(f.vm, VmEvent::Kind::BadBlockBytes));
    }

    TEST_CASE("a missing block is reported")
    {
        Fixture f;
        Digest a = f.put("gone");
        f.d.ss.drop_block(a);
        CHECK(errc_of([&] { f.vm.vm_read(a, 1); }) == Errc::NotFound);
        CHECK(has_event(f.vm, VmEvent::Kind::LoadMiss));
    }

    TEST_CASE("a refused grant is recorded")
    {
        Fixture f;
        f.d.ss.faults().refuse_grant_for.insert(1);
        for (int i = 0; i < 8; ++i) f.put("r" + std::to_string(i));
        f.vm.flush_all();
        CHECK(has_event(f.vm, VmEvent::Kind::GrantRefused));
    }

    TEST_CASE("writes made while the server is down are retransmitted")
    {
        Fixture f(SignMode::Async, 100);
        f.d.env.set_down("ss", true);
        Digest a = f.put("while down");
        CHECK(f.d.ss.blocks().count(a) == 0);
        CHECK(f.vm.live_entries() >= 1);
        f.d.env.set_down("ss", false);
        ReplayReport r = f.vm.vm_recover();
        CHECK(r.retransmitted.size() >= 1);
        CHECK(f.d.ss.blocks().count(a) == 1);
        f.vm.flush_all();
        f.d.quiesce();
        CHECK(f.vm.vm_read(a, 1) == to_bytes("while down"));
        CHECK(f.d.ss.refcnt_tree().root() == f.d.lhash->refcnt_tree().root());
    }

    TEST_CASE("frees release the server reference")
    {
        Fixture f(SignMode::Async, 4);
        Digest a = f.put("temp");
        f.vm.vm_free(a, kScratch, 1);
        f.vm.flush_all();
        f.d.quiesce();
        CHECK(f.d.ss.blocks().count(a) == 0);
        CHECK(f.d.ss.refcnt_tree().count(a, 1) == 0);
    }

    TEST_CASE("compaction keeps only live entries")
    {
        Fixture f(SignMode::Async, 4);
        for (int i = 0; i < 16; ++i) f.put("c" + std::to_string(i));
        f.vm.flush_all();
        f.d.quiesce();
        std::size_t before = f.vm.journal_records();
        f.vm.compact(f.vm.attachments());
        CHECK(f.vm.journal_records() <= before);
        CHECK(f.vm.live_entries() == 0);
    }

    TEST_CASE("log entries round trip")
    {
        std::mt19937_64 rng(3);
        for (int i = 0; i < 50; ++i) {
            LocalLogEntry e;
            e.entry = BatchEntry{Digest(random_bytes(rng, 32)), InodeNumber::unpack(rng()),
                                 rng() % 2 ? OpKind::Store : OpKind::Free, rng(), rng()};
            e.uid = 1 + rng() % 3;
            if (e.entry.op == OpKind::Store) e.data = random_bytes(rng, rng() % 100);
            Bytes b = encode_log_entry(e);
            Reader r(b);
            REQUIRE(decode_log_entry(r) == e);
            REQUIRE(r.done());
        }
    }

    TEST_CASE("sign modes parse")
    {
        CHECK(parse_sign_mode("async") == SignMode::Async);
        CHECK(parse_sign_mode("sync") == SignMode::Sync);
        CHECK(parse_sign_mode("no-sign") == SignMode::NoSign);
        for (SignMode m : {SignMode::NoSign, SignMode::Sync, SignMode::Async})
            CHECK(parse_sign_mode(sign_mode_name(m)) == m);
        CHECK(errc_of([] { parse_sign_mode("fast"); }) == Errc::Config);
    }
}
