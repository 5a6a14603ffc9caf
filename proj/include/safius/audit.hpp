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

#include <optional>
#include <string>
#include <vector>

#include "safius/lhash_server.hpp"
#include "safius/storage_server.hpp"

namespace safius {

enum class DisputeKind { LoadMiss, UnsolicitedStore, RefcntMismatch, GrantRefusal, BadBlockBytes };

const char* dispute_kind_name(DisputeKind k);

struct Dispute {
    DisputeKind kind = DisputeKind::LoadMiss;
    Digest blknum;
    InodeNumber ino;
    PrincipalId uid = 0;
    std::string context;
    Bytes returned_bytes;  // BadBlockBytes
    std::optional<Divergence> divergence;  // RefcntMismatch
};

enum class Party { NoViolation, StorageServer, Fileserver };

struct Verdict {
    Party guilty = Party::NoViolation;
    PrincipalId uid = 0;  // when guilty == Fileserver
    bool insufficient_evidence = false;
    std::string rationale;
    friend bool operator==(const Verdict&, const Verdict&) = default;
};

std::string verdict_str(const Verdict& v);

// Immutable snapshot of everything the auditor may consult.
struct Evidence {
    std::vector<GrantBatch> vault_batches;
    std::vector<std::pair<SignedRequest, GrantSingle>> vault_singles;
    std::map<Digest, UidCounts> agreed_leaves;
    std::optional<SignedRoot> signed_root;
    std::map<Digest, UidCounts> lhash_counts;
    ServerEvidence server;
};

Evidence collect_evidence(const LhashServer& lhash, const StorageServer& ss);

// Signature-backed reference counts for one block, split by whose request
// signature backs them.
struct BackedCounts {
    UidCounts total;
    UidCounts self_signed;  // owner's count backed by the owner's own signatures
    // Stores the server would rather not show: vault and agreed leaves only,
    // less every free anyone can show.
    UidCounts client_held;
    bool any_store = false;
};

BackedCounts backed_counts(const Evidence& ev, const KeyRegistry& keys, const Digest& blknum);

Verdict resolve(const Dispute& d, const Evidence& ev, const KeyRegistry& keys);

}  // namespace safius
