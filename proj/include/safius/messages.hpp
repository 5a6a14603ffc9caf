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

#pragma once

#include <vector>

#include "safius/types.hpp"

namespace safius {

struct SessionNonce {
    Nonce nonce = 0;
    PrincipalId principal = 0;
    friend bool operator==(const SessionNonce&, const SessionNonce&) = default;
};

// D_u: one signed store or free.
struct RequestSingle {
    Digest blknum;
    InodeNumber ino;
    PrincipalId uid = 0;
    OpKind op = OpKind::Store;
    Nonce nonce = 0;
    std::uint64_t count = 0;
    friend bool operator==(const RequestSingle&, const RequestSingle&) = default;
};

struct SignedRequest {
    RequestSingle req;
    Signature sig;
    friend bool operator==(const SignedRequest&, const SignedRequest&) = default;
};

// D_ss: the server's echo of a D_u with the filegroup state it saw.
struct GrantSingle {
    RequestSingle inner;
    Digest fgrphash;
    Signature sig;
    friend bool operator==(const GrantSingle&, const GrantSingle&) = default;
};

// B_u: a D_u without the uid, which moves to the batch header.
struct BatchEntry {
    Digest blknum;
    InodeNumber ino;
    OpKind op = OpKind::Store;
    Nonce nonce = 0;
    std::uint64_t count = 0;
    friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct BatchHeader {
    PrincipalId uid = 0;
    std::uint32_t count = 0;
    friend bool operator==(const BatchHeader&, const BatchHeader&) = default;
};

struct RequestBatch {
    BatchHeader header;
    std::vector<BatchEntry> entries;
    Signature sig;
    friend bool operator==(const RequestBatch&, const RequestBatch&) = default;
};

struct GrantBatch {
    RequestBatch inner;
    Digest fgrphash;
    Signature sig;
    friend bool operator==(const GrantBatch&, const GrantBatch&) = default;
};

struct StoreInodeDataMsg {
    std::uint64_t txid = 0;
    std::vector<std::pair<InodeNumber, Idata>> pairs;
    friend bool operator==(const StoreInodeDataMsg&, const StoreInodeDataMsg&) = default;
};

// The storage server's signature over an agreed refcnt-tree root.
struct SignedRoot {
    Digest root;
    std::uint64_t epoch = 0;
    Signature sig;
    friend bool operator==(const SignedRoot&, const SignedRoot&) = default;
};

// Wire tags; the first byte of every top-level encoding.
enum class MsgTag : std::uint8_t {
    SessionNonce = 0x01,
    RequestSingle = 0x02,
    SignedRequest = 0x03,
    GrantSingle = 0x04,
    BatchEntry = 0x05,
    BatchHeader = 0x06,
    RequestBatch = 0x07,
    GrantBatch = 0x08,
    StoreInodeData = 0x09,
    SignedRoot = 0x0a,
};

Bytes encode(const SessionNonce& m);
Bytes encode(const RequestSingle& m);
Bytes encode(const SignedRequest& m);
Bytes encode(const GrantSingle& m);
Bytes encode(const BatchEntry& m);
Bytes encode(const BatchHeader& m);
Bytes encode(const RequestBatch& m);
Bytes encode(const GrantBatch& m);
Bytes encode(const StoreInodeDataMsg& m);
Bytes encode(const SignedRoot& m);

template <typename T>
T decode(ByteView bytes);

// Digest both parties sign and verify: the canonical encoding with the
// message's own signature field left out.
Digest payload_digest(const RequestSingle& m);
Digest payload_digest(const GrantSingle& m);
Digest payload_digest(const RequestBatch& m);
Digest payload_digest(const GrantBatch& m);
Digest payload_digest(const SignedRoot& m);

BatchEntry to_entry(const RequestSingle& r);
RequestSingle to_request(const BatchEntry& e, PrincipalId uid);

// Field-level helpers shared with the log and record encoders.
void put_digest(Writer& w, const Digest& d);
Digest get_digest(Reader& r, const char* field);
void put_idata(Writer& w, const Idata& d);
Idata get_idata(Reader& r, const char* field);
void put_signature(Writer& w, const Signature& s);
Signature get_signature(Reader& r, const char* field);
void put_entry(Writer& w, const BatchEntry& e);
BatchEntry get_entry(Reader& r);

}  // namespace safius
