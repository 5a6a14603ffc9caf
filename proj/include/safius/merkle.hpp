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

#include <map>
#include <cstdint>
#include <optional>
#include <vector>

#include "safius/crypto.hpp"

namespace safius {

// Authenticated ordered map. The tree is a 16-ary trie over key nibbles with
// single-entry subtrees collapsed into leaves, so the root depends only on the
// entry set and never on insertion history.
class MerkleMap {
public:
    using Map = std::map<Bytes, Bytes>;

    void put(const Bytes& key, Bytes value);
    // Deleting an absent key leaves the map (and root) unchanged.
    void erase(const Bytes& key);
    const Bytes* find(const Bytes& key) const;
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const Map& entries() const { return entries_; }

    Digest root() const;
    static Digest empty_root();

    friend bool operator==(const MerkleMap& a, const MerkleMap& b) { return a.entries_ == b.entries_; }

private:
    Map entries_;
    mutable std::optional<Digest> root_cache_;
};

struct Divergence {
    Bytes key;                         // first key whose entry differs
    std::vector<std::uint8_t> path;    // nibble path from the root to the differing subtree
    std::optional<Bytes> left_value;   // value in the first map, if present
    std::optional<Bytes> right_value;  // value in the second map, if present
};

using UidCounts = std::map<PrincipalId, std::int64_t>;

// Block -> per-uid reference counts. A leaf exists iff some count is
// nonzero. Leaves point into a table of distinct count patterns, so the
// common case of single-owner blocks shares one table entry per pattern.
class RefcntTree {
public:
    void apply(const Digest& blknum, PrincipalId uid, std::int64_t delta);
    const UidCounts* counts(const Digest& blknum) const;
    std::int64_t count(const Digest& blknum, PrincipalId uid) const;

    Digest root() const { return map_.root(); }
    const MerkleMap& map() const { return map_; }
    std::size_t leaves() const { return map_.size(); }
    std::size_t patterns() const { return patterns_.size(); }
    std::map<Digest, UidCounts> snapshot() const;

    static Bytes encode_pattern(const UidCounts& c);
    static UidCounts decode_pattern(ByteView b);

    friend bool operator==(const RefcntTree& a, const RefcntTree& b) { return a.map_ == b.map_; }

private:
    struct Pattern {
        UidCounts counts;
        std::size_t users = 0;
    };
    void unref_pattern(const Digest& id);

    MerkleMap map_;                        // blknum -> pattern id
    std::map<Digest, Pattern> patterns_;   // pattern id -> counts
};

// Walks both tries from the root, descending into the first child whose hash
// differs. Returns nullopt when the roots agree.
std::optional<Divergence> first_divergence(const MerkleMap& left, const MerkleMap& right);

}  // namespace safius
