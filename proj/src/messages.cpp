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

#include "safius/messages.hpp"

namespace safius {

void put_digest(Writer& w, const Digest& d) { w.bytes(d.view()); }

Digest get_digest(Reader& r, const char* field)
{
    std::size_t at = r.offset();
    Bytes raw = r.bytes(field);
    if (raw.size() != digest_width())
        raise(Errc::Decode, std::string(field) + " at offset " + std::to_string(at) + ": digest width " +
                                std::to_string(raw.size()));
    return Digest(raw);
}

void put_idata(Writer& w, const Idata& d)
{
    put_digest(w, d.inode_hash);
    w.u64(d.incarnation);
}

Idata get_idata(Reader& r, const char* field)
{
    Idata d;
    d.inode_hash = get_digest(r, field);
    d.incarnation = r.u64(field);
    return d;
}

void put_signature(Writer& w, const Signature& s)
{
    w.u32(s.signer);
    w.bytes(s.bytes);
}

Signature get_signature(Reader& r, const char* field)
{
    Signature s;
    s.signer = r.u32(field);
    s.bytes = r.bytes(field);
    return s;
}

namespace {

void put_op(Writer& w, OpKind op) { w.u8(static_cast<std::uint8_t>(op)); }

OpKind get_op(Reader& r)
{
    std::size_t at = r.offset();
    auto v = r.u8("op");
    if (v != 1 && v != 2) raise(Errc::Decode, "op at offset " + std::to_string(at) + ": invalid value");
    return static_cast<OpKind>(v);
}

void put_request(Writer& w, const RequestSingle& m)
{
    put_digest(w, m.blknum);
    w.u64(m.ino.pack());
    w.u32(m.uid);
    put_op(w, m.op);
    w.u64(m.nonce);
    w.u64(m.count);
}

RequestSingle get_request(Reader& r)
{
    RequestSingle m;
    m.blknum = get_digest(r, "blknum");
    m.ino = InodeNumber::unpack(r.u64("ino"));
    m.uid = r.u32("uid");
    m.op = get_op(r);
    m.nonce = r.u64("nonce");
    m.count = r.u64("count");
    return m;
}

void put_header(Writer& w, const BatchHeader& h)
{
    w.u32(h.uid);
    w.u32(h.count);
}

BatchHeader get_header(Reader& r)
{
    BatchHeader h;
    h.uid = r.u32("header.uid");
    h.count = r.u32("header.count");
    return h;
}

void put_batch_unsigned(Writer& w, const RequestBatch& b)
{
    if (b.header.count != b.entries.size())
        raise(Errc::InvalidArgument, "batch header count " + std::to_string(b.header.count) + " != " +
                                         std::to_string(b.entries.size()) + " entries");
    put_header(w, b.header);
    for (const auto& e : b.entries) put_entry(w, e);
}

RequestBatch get_batch(Reader& r)
{
    RequestBatch b;
    b.header = get_header(r);
    // Each entry needs at least its fixed-width fields; reject absurd counts early.
    b.entries.reserve(std::min<std::uint32_t>(b.header.count, 1u << 16));
    for (std::uint32_t i = 0; i < b.header.count; ++i) b.entries.push_back(get_entry(r));
    b.sig = get_signature(r, "batch.sig");
    return b;
}

void expect_tag(Reader& r, MsgTag tag)
{
    auto v = r.u8("tag");
    if (v != static_cast<std::uint8_t>(tag)) r.fail("tag", "unexpected message type " + std::to_string(v));
}

Writer tagged(MsgTag tag)
{
    Writer w;
    w.u8(static_cast<std::uint8_t>(tag));
    return w;
}

}  // namespace

void put_entry(Writer& w, const BatchEntry& e)
{
    put_digest(w, e.blknum);
    w.u64(e.ino.pack());
    put_op(w, e.op);
    w.u64(e.nonce);
    w.u64(e.count);
}

BatchEntry get_entry(Reader& r)
{
    BatchEntry e;
    e.blknum = get_digest(r, "entry.blknum");
    e.ino = InodeNumber::unpack(r.u64("entry.ino"));
    e.op = get_op(r);
    e.nonce = r.u64("entry.nonce");
    e.count = r.u64("entry.count");
    return e;
}

Bytes encode(const SessionNonce& m)
{
    Writer w = tagged(MsgTag::SessionNonce);
    w.u64(m.nonce);
    w.u32(m.principal);
    return std::move(w).take();
}

Bytes encode(const RequestSingle& m)
{
    Writer w = tagged(MsgTag::RequestSingle);
    put_request(w, m);
    return std::move(w).take();
}

Bytes encode(const SignedRequest& m)
{
    Writer w = tagged(MsgTag::SignedRequest);
    put_request(w, m.req);
    put_signature(w, m.sig);
    return std::move(w).take();
}

namespace {
Writer grant_single_unsigned(const GrantSingle& m)
{
    Writer w = tagged(MsgTag::GrantSingle);
    put_request(w, m.inner);
    put_digest(w, m.fgrphash);
    return w;
}

Writer batch_unsigned(const RequestBatch& m)
{
    Writer w = tagged(MsgTag::RequestBatch);
    put_batch_unsigned(w, m);
    return w;
}

Writer grant_batch_unsigned(const GrantBatch& m)
{
    Writer w = tagged(MsgTag::GrantBatch);
    put_batch_unsigned(w, m.inner);
    put_signature(w, m.inner.sig);
    put_digest(w, m.fgrphash);
    return w;
}
}  // namespace

Bytes encode(const GrantSingle& m)
{
    Writer w = grant_single_unsigned(m);
    put_signature(w, m.sig);
    return std::move(w).take();
}

Bytes encode(const BatchEntry& m)
{
    Writer w = tagged(MsgTag::BatchEntry);
    put_entry(w, m);
    return std::move(w).take();
}

Bytes encode(const BatchHeader& m)
{
    Writer w = tagged(MsgTag::BatchHeader);
    put_header(w, m);
    return std::move(w).take();
}

Bytes encode(const RequestBatch& m)
{
    Writer w = batch_unsigned(m);
    put_signature(w, m.sig);
    return std::move(w).take();
}

Bytes encode(const GrantBatch& m)
{
    Writer w = grant_batch_unsigned(m);
    put_signature(w, m.sig);
    return std::move(w).take();
}

Bytes encode(const StoreInodeDataMsg& m)
{
    Writer w = tagged(MsgTag::StoreInodeData);
    w.u64(m.txid);
    w.u32(static_cast<std::uint32_t>(m.pairs.size()));
    for (const auto& [ino, idata] : m.pairs) {
        w.u64(ino.pack());
        put_idata(w, idata);
    }
    return std::move(w).take();
}

template <>
SessionNonce decode<SessionNonce>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::SessionNonce);
    SessionNonce m;
    m.nonce = r.u64("nonce");
    m.principal = r.u32("principal");
    r.expect_done("session_nonce");
    return m;
}

template <>
RequestSingle decode<RequestSingle>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::RequestSingle);
    auto m = get_request(r);
    r.expect_done("request_single");
    return m;
}

template <>
SignedRequest decode<SignedRequest>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::SignedRequest);
    SignedRequest m;
    m.req = get_request(r);
    m.sig = get_signature(r, "sig");
    r.expect_done("signed_request");
    return m;
}

template <>
GrantSingle decode<GrantSingle>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::GrantSingle);
    GrantSingle m;
    m.inner = get_request(r);
    m.fgrphash = get_digest(r, "fgrphash");
    m.sig = get_signature(r, "sig");
    r.expect_done("grant_single");
    return m;
}

template <>
BatchEntry decode<BatchEntry>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::BatchEntry);
    auto m = get_entry(r);
    r.expect_done("batch_entry");
    return m;
}

template <>
BatchHeader decode<BatchHeader>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::BatchHeader);
    auto m = get_header(r);
    r.expect_done("batch_header");
    return m;
}

template <>
RequestBatch decode<RequestBatch>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::RequestBatch);
    auto m = get_batch(r);
    r.expect_done("request_batch");
    return m;
}

template <>
GrantBatch decode<GrantBatch>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::GrantBatch);
    GrantBatch m;
    m.inner = get_batch(r);
    m.fgrphash = get_digest(r, "fgrphash");
    m.sig = get_signature(r, "sig");
    r.expect_done("grant_batch");
    return m;
}

template <>
StoreInodeDataMsg decode<StoreInodeDataMsg>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::StoreInodeData);
    StoreInodeDataMsg m;
    m.txid = r.u64("txid");
    auto n = r.u32("pair_count");
    for (std::uint32_t i = 0; i < n; ++i) {
        auto ino = InodeNumber::unpack(r.u64("pair.ino"));
        m.pairs.emplace_back(ino, get_idata(r, "pair.idata"));
    }
    r.expect_done("store_inode_data");
    return m;
}

namespace {
Writer signed_root_unsigned(const SignedRoot& m)
{
    Writer w = tagged(MsgTag::SignedRoot);
    put_digest(w, m.root);
    w.u64(m.epoch);
    return w;
}
}  // namespace

Bytes encode(const SignedRoot& m)
{
    Writer w = signed_root_unsigned(m);
    put_signature(w, m.sig);
    return std::move(w).take();
}

template <>
SignedRoot decode<SignedRoot>(ByteView bytes)
{
    Reader r(bytes);
    expect_tag(r, MsgTag::SignedRoot);
    SignedRoot m;
    m.root = get_digest(r, "root");
    m.epoch = r.u64("epoch");
    m.sig = get_signature(r, "sig");
    r.expect_done("signed_root");
    return m;
}

Digest payload_digest(const SignedRoot& m) { return digest(signed_root_unsigned(m).data()); }

Digest payload_digest(const RequestSingle& m) { return digest(encode(m)); }
Digest payload_digest(const GrantSingle& m) { return digest(grant_single_unsigned(m).data()); }
Digest payload_digest(const RequestBatch& m) { return digest(batch_unsigned(m).data()); }
Digest payload_digest(const GrantBatch& m) { return digest(grant_batch_unsigned(m).data()); }

BatchEntry to_entry(const RequestSingle& r) { return BatchEntry{r.blknum, r.ino, r.op, r.nonce, r.count}; }

RequestSingle to_request(const BatchEntry& e, PrincipalId uid)
{
    return RequestSingle{e.blknum, e.ino, uid, e.op, e.nonce, e.count};
}

}  // namespace safius
