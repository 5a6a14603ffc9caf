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


#include <fstream>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "safius/messages.hpp"
#include "test_util.hpp"

using namespace safius;

namespace {

nlohmann::json golden()
{
    std::ifstream in(std::string(SAFIUS_GOLDEN_DIR) + "/wire.json");
    return nlohmann::json::parse(in);
}

Digest rand_digest(std::mt19937_64& rng) { return Digest(random_bytes(rng, 32)); }

Signature rand_sig(std::mt19937_64& rng) { return Signature{random_bytes(rng, 64), static_cast<PrincipalId>(rng() % 5)}; }

BatchEntry rand_entry(std::mt19937_64& rng)
{
    return BatchEntry{rand_digest(rng), InodeNumber::unpack(rng()), rng() % 2 ? OpKind::Store : OpKind::Free, rng(),
                      rng() % 1000};
}

RequestBatch rand_batch(std::mt19937_64& rng)
{
    RequestBatch b;
    b.header.uid = 1 + rng() % 3;
    std::size_t n = rng() % 20;
    for (std::size_t i = 0; i < n; ++i) b.entries.push_back(rand_entry(rng));
    b.header.count = static_cast<std::uint32_t>(n);
    b.sig = rand_sig(rng);
    return b;
}

template <typename T>
void round_trip(const T& m)
{
    Bytes e = encode(m);
    REQUIRE(decode<T>(e) == m);
    // every strict prefix fails to decode, as does trailing garbage
    for (std::size_t cut = 0; cut < e.size(); cut += 1 + e.size() / 17)
        REQUIRE(errc_of([&] { decode<T>(ByteView(e.data(), cut)); }) == Errc::Decode);
    Bytes longer = e;
    longer.push_back(0);
    REQUIRE(errc_of([&] { decode<T>(longer); }) == Errc::Decode);
}

}  // namespace

TEST_SUITE("messages")
{
    TEST_CASE("frozen encodings")
    {
        auto g = golden();
        RequestSingle r{digest("blk"), InodeNumber{1, 2, 3}, 2, OpKind::Free, 0x1122334455667788ULL, 5};
        CHECK(to_hex(encode(r)) == g["request_single"]["encoding"].get<std::string>());
        CHECK(payload_digest(r).hex() == g["request_single"]["payload_digest"].get<std::string>());
        SignedRoot s{digest("root"), 9, Signature{Bytes(64, 0xee), kStorageServerPrincipal}};
        CHECK(to_hex(encode(s)) == g["signed_root"]["encoding"].get<std::string>());
        CHECK(payload_digest(s).hex() == g["signed_root"]["payload_digest"].get<std::string>());
    }

    TEST_CASE("the tag byte is checked")
    {
        RequestSingle r{digest("blk"), InodeNumber{1, 2, 3}, 2, OpKind::Store, 1, 1};
        Bytes e = encode(r);
        CHECK(e[0] == static_cast<std::uint8_t>(MsgTag::RequestSingle));
        CHECK(errc_of([&] { decode<BatchEntry>(e); }) == Errc::Decode);
        e[0] = 0x7f;
        CHECK(errc_of([&] { decode<RequestSingle>(e); }) == Errc::Decode);
    }

    TEST_CASE("an unknown op kind does not decode")
    {
        RequestSingle r{digest("blk"), InodeNumber{1, 2, 3}, 2, OpKind::Store, 1, 1};
        Bytes e = encode(r);
        // tag, digest (4+32), ino (8), uid (4), then op
        e[1 + 36 + 8 + 4] = 9;
        CHECK(errc_of([&] { decode<RequestSingle>(e); }) == Errc::Decode);
    }

    TEST_CASE("property: every message round trips")
    {
        std::mt19937_64 rng(11);
        for (int i = 0; i < 50; ++i) {
            round_trip(SessionNonce{rng(), static_cast<PrincipalId>(rng())});
            RequestSingle rs{rand_digest(rng), InodeNumber::unpack(rng()), static_cast<PrincipalId>(rng() % 4),
                             OpKind::Store, rng(), rng()};
            round_trip(rs);
            round_trip(SignedRequest{rs, rand_sig(rng)});
            round_trip(GrantSingle{rs, rand_digest(rng), rand_sig(rng)});
            round_trip(rand_entry(rng));
            round_trip(BatchHeader{static_cast<PrincipalId>(rng()), static_cast<std::uint32_t>(rng())});
            RequestBatch b = rand_batch(rng);
            round_trip(b);
            round_trip(GrantBatch{b, rand_digest(rng), rand_sig(rng)});
            StoreInodeDataMsg sd{rng()};
            for (int k = 0; k < 4; ++k) sd.pairs.push_back({InodeNumber::unpack(rng()), Idata{rand_digest(rng), rng()}});
            round_trip(sd);
            round_trip(SignedRoot{rand_digest(rng), rng(), rand_sig(rng)});
        }
    }

    TEST_CASE("property: payload digests ignore the signature and nothing else")
    {
        std::mt19937_64 rng(12);
        for (int i = 0; i < 50; ++i) {
            RequestBatch b = rand_batch(rng);
            if (b.entries.empty()) continue;
            RequestBatch c = b;
            c.sig = rand_sig(rng);
            REQUIRE(payload_digest(b) == payload_digest(c));
            c.entries[rng() % c.entries.size()].count ^= 1;
            REQUIRE(payload_digest(b) != payload_digest(c));
            GrantBatch g{b, rand_digest(rng), rand_sig(rng)};
            GrantBatch h = g;
            h.sig = rand_sig(rng);
            REQUIRE(payload_digest(g) == payload_digest(h));
            h.fgrphash = rand_digest(rng);
            REQUIRE(payload_digest(g) != payload_digest(h));
        }
    }

    TEST_CASE("single and batched forms convert")
    {
        RequestSingle r{digest("b"), InodeNumber{2, 3, 4}, 3, OpKind::Free, 77, 8};
        BatchEntry e = to_entry(r);
        CHECK(e.blknum == r.blknum);
        CHECK(e.count == 8);
        CHECK(to_request(e, 3) == r);
    }

    TEST_CASE("inode numbers pack losslessly")
    {
        InodeNumber i{0xabcd, 0x1234, 0xdeadbeef};
        CHECK(InodeNumber::unpack(i.pack()) == i);
        CHECK(i.str() == "43981:4660:3735928559");
    }
}
