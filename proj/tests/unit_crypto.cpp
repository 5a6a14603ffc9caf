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
#include "safius/crypto.hpp"
#include "safius/merkle.hpp"
#include "test_util.hpp"

using namespace safius;

TEST_SUITE("crypto")
{
    TEST_CASE("sha256 known answers")
    {
        CHECK(digest("abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        CHECK(digest("").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    TEST_CASE("sha1 known answer and width")
    {
        HashAlgoGuard g(HashAlgo::Sha1);
        CHECK(digest_width() == 20);
        CHECK(digest("abc").hex() == "a9993e364706816aba3e25717850c26c9cd0d89d");
        CHECK(Digest::zero().size() == 20);
    }

    TEST_CASE("ed25519 published vector verifies")
    {
        KeyRef k{4, from_hex("3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c")};
        Signature s{from_hex("92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da"
                             "085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00"),
                    4};
        Bytes msg{0x72};
        CHECK(KeyRegistry::verify(k, Digest(msg), s));
        s.bytes[10] ^= 1;
        CHECK_FALSE(KeyRegistry::verify(k, Digest(msg), s));
    }

    TEST_CASE("sign and verify")
    {
        KeyRegistry r;
        r.generate(1, 7);
        r.generate(2, 7);
        Digest d = digest("payload");
        Signature s = r.sign(1, d);
        CHECK(s.signer == 1);
        CHECK(r.verify(1, d, s));
        CHECK_FALSE(r.verify(2, d, s));
        CHECK_FALSE(r.verify(1, digest("other"), s));
        CHECK_FALSE(r.verify(9, d, s));
        CHECK(KeyRegistry::verify(r.public_key(1), d, s));
        CHECK_THROWS_AS(r.sign(9, d), Error);
    }

    TEST_CASE("keys derive from the seed")
    {
        KeyRegistry a, b, c;
        a.generate(1, 7);
        b.generate(1, 7);
        c.generate(1, 8);
        CHECK(a.public_key(1).public_material == b.public_key(1).public_material);
        CHECK(a.public_key(1).public_material != c.public_key(1).public_material);
        Digest d = digest("x");
        CHECK(a.sign(1, d) == b.sign(1, d));
    }

    TEST_CASE("convergent encryption")
    {
        FgrpKey k1 = FgrpKey::derive(1, 3), k2 = FgrpKey::derive(2, 3);
        Bytes p = to_bytes("same plaintext");
        CHECK(encrypt(k1, p) == encrypt(k1, p));
        CHECK(encrypt(k1, p) != encrypt(k2, p));
        CHECK(encrypt(k1, p) != encrypt(k1, to_bytes("same plaintexT")));
        CHECK(encrypt(k1, p).size() == p.size() + 28);
        CHECK(decrypt(k1, encrypt(k1, p)) == p);
    }

    TEST_CASE("decrypt rejects the wrong key and tampering")
    {
        FgrpKey k1 = FgrpKey::derive(1, 3), k2 = FgrpKey::derive(2, 3);
        Bytes c = encrypt(k1, to_bytes("secret"));
        CHECK(errc_of([&] { decrypt(k2, c); }) == Errc::DecryptFailure);
        Bytes t = c;
        t[14] ^= 0x40;
        CHECK(errc_of([&] { decrypt(k1, t); }) == Errc::DecryptFailure);
        CHECK(errc_of([&] { decrypt(k1, Bytes(10)); }) == Errc::DecryptFailure);
    }

    TEST_CASE("property: encryption round trips")
    {
        std::mt19937_64 rng(1);
        FgrpKey k = FgrpKey::derive(5, 1);
        for (int i = 0; i < 200; ++i) {
            Bytes p = random_bytes(rng, rng() % 4097);
            Bytes c = encrypt(k, p);
            REQUIRE(decrypt(k, c) == p);
            std::size_t bit = rng() % (c.size() * 8);
            c[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
            REQUIRE(errc_of([&] { decrypt(k, c); }) == Errc::DecryptFailure);
        }
    }
}

TEST_SUITE("bytes")
{
    TEST_CASE("hex round trip")
    {
        Bytes b{0x00, 0xab, 0xff, 0x10};
        CHECK(to_hex(b) == "00abff10");
        CHECK(from_hex("00ABff10") == b);
        CHECK_THROWS_AS(from_hex("abc"), Error);
        CHECK_THROWS_AS(from_hex("zz"), Error);
    }

    TEST_CASE("writer and reader agree")
    {
        Writer w;
        w.u8(1);
        w.u16(0x0203);
        w.u32(0x04050607);
        w.u64(0x08090a0b0c0d0e0fULL);
        w.bytes(to_bytes("hi"));
        CHECK(to_hex(w.data()) == "010302070605040f0e0d0c0b0a09080200000068" "69");
        Reader r(w.data());
        CHECK(r.u8("a") == 1);
        CHECK(r.u16("b") == 0x0203);
        CHECK(r.u32("c") == 0x04050607);
        CHECK(r.u64("d") == 0x08090a0b0c0d0e0fULL);
        CHECK(r.bytes("e") == to_bytes("hi"));
        CHECK(r.done());
    }

    TEST_CASE("reader names the failing field")
    {
        Bytes b{1, 2};
        Reader r(b);
        try {
            r.u32("length");
            FAIL("no throw");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::Decode);
            CHECK(std::string(e.what()).find("length") != std::string::npos);
        }
    }
}

TEST_SUITE("merkle")
{
    TEST_CASE("empty map has the empty root")
    {
        MerkleMap m;
        CHECK(m.root() == MerkleMap::empty_root());
        m.put(to_bytes("k"), to_bytes("v"));
        CHECK(m.root() != MerkleMap::empty_root());
        m.erase(to_bytes("k"));
        CHECK(m.root() == MerkleMap::empty_root());
    }

    TEST_CASE("erasing an absent key changes nothing")
    {
        MerkleMap m;
        m.put(to_bytes("a"), to_bytes("1"));
        Digest r = m.root();
        m.erase(to_bytes("b"));
        CHECK(m.root() == r);
    }

    TEST_CASE("property: root depends only on contents")
    {
        std::mt19937_64 rng(2);
        for (int round = 0; round < 20; ++round) {
            std::vector<std::pair<Bytes, Bytes>> kv;
            for (int i = 0; i < 60; ++i) kv.push_back({random_bytes(rng, 1 + rng() % 8), random_bytes(rng, 4)});
            MerkleMap a, b;
            for (const auto& [k, v] : kv) a.put(k, v);
            std::shuffle(kv.begin(), kv.end(), rng);
            // b takes a detour through extra keys first
            for (int i = 0; i < 10; ++i) b.put(random_bytes(rng, 9), to_bytes("x"));
            for (const auto& [k, v] : kv) b.put(k, v);
            for (const auto& [k, v] : std::map<Bytes, Bytes>(b.entries()))
                if (!a.find(k)) b.erase(k);
            REQUIRE(a == b);
            REQUIRE(a.root() == b.root());
        }
    }

    TEST_CASE("first divergence finds the differing key")
    {
        std::mt19937_64 rng(3);
        MerkleMap a;
        for (int i = 0; i < 100; ++i) a.put(random_bytes(rng, 32), random_bytes(rng, 8));
        MerkleMap b = a;
        CHECK_FALSE(first_divergence(a, b).has_value());
        Bytes key = std::next(a.entries().begin(), 37)->first;
        b.put(key, to_bytes("changed"));
        auto d = first_divergence(a, b);
        REQUIRE(d.has_value());
        CHECK(d->key == key);
        CHECK(d->right_value == to_bytes("changed"));
        Bytes extra = random_bytes(rng, 32);
        MerkleMap c = a;
        c.put(extra, to_bytes("new"));
        auto e = first_divergence(a, c);
        REQUIRE(e.has_value());
        CHECK(e->key == extra);
        CHECK_FALSE(e->left_value.has_value());
    }

    TEST_CASE("refcnt tree drops zero leaves and shares patterns")
    {
        RefcntTree t;
        Digest b1 = digest("b1"), b2 = digest("b2");
        t.apply(b1, 1, 2);
        t.apply(b2, 1, 2);
        CHECK(t.leaves() == 2);
        CHECK(t.patterns() == 1);
        t.apply(b2, 3, 1);
        CHECK(t.patterns() == 2);
        CHECK(t.count(b2, 3) == 1);
        t.apply(b2, 1, -2);
        t.apply(b2, 3, -1);
        CHECK(t.leaves() == 1);
        CHECK(t.counts(b2) == nullptr);
        t.apply(b1, 1, -2);
        CHECK(t.root() == MerkleMap::empty_root());
        CHECK(t.patterns() == 0);
    }

    TEST_CASE("property: refcnt tree matches a plain map")
    {
        std::mt19937_64 rng(4);
        RefcntTree t;
        std::map<Digest, UidCounts> model;
        std::vector<Digest> blocks;
        for (int i = 0; i < 30; ++i) blocks.push_back(digest(std::to_string(i)));
        for (int i = 0; i < 3000; ++i) {
            Digest b = blocks[rng() % blocks.size()];
            PrincipalId u = 1 + rng() % 3;
            std::int64_t delta = (rng() % 2) ? 1 : -1;
            t.apply(b, u, delta);
            if ((model[b][u] += delta) == 0) model[b].erase(u);
            if (model[b].empty()) model.erase(b);
        }
        CHECK(t.snapshot() == model);
        RefcntTree u;
        for (const auto& [b, c] : model)
            for (const auto& [uid, n] : c) u.apply(b, uid, n);
        CHECK(u.root() == t.root());
        for (const auto& [b, c] : model) CHECK(RefcntTree::decode_pattern(RefcntTree::encode_pattern(c)) == c);
    }
}
