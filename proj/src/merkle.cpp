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

#include "safius/merkle.hpp"

#include <array>

namespace safius {

namespace {

using Iter = MerkleMap::Map::const_iterator;
constexpr int kTerminal = 16;
constexpr int kSlots = 17;

// Slot of `key` at nibble depth `depth`; keys that end here take the terminal slot.
int slot_of(const Bytes& key, std::size_t depth)
{
    if (depth >= key.size() * 2) return kTerminal;
    std::uint8_t b = key[depth / 2];
    return depth % 2 == 0 ? (b >> 4) : (b & 0xf);
}

Digest leaf_hash(const Bytes& key, const Bytes& value)
{
    Writer w;
    w.u8(0x00);
    w.bytes(key);
    w.bytes(value);
    return digest(w.data());
}

struct Children {
    std::array<std::pair<Iter, Iter>, kSlots> ranges;
    std::array<bool, kSlots> present{};
};

Children split(Iter begin, Iter end, std::size_t depth)
{
    Children c;
    for (auto it = begin; it != end;) {
        int s = slot_of(it->first, depth);
        auto first = it;
        while (it != end && slot_of(it->first, depth) == s) ++it;
        c.ranges[s] = {first, it};
        c.present[s] = true;
    }
    return c;
}

Digest subtree_hash(Iter begin, Iter end, std::size_t depth)
{
    if (std::next(begin) == end) return leaf_hash(begin->first, begin->second);
    Children c = split(begin, end, depth);
    Writer w;
    w.u8(0x01);
    for (int s = 0; s < kSlots; ++s) {
        if (!c.present[s]) {
            w.u8(0);
            continue;
        }
        w.u8(1);
        w.raw(subtree_hash(c.ranges[s].first, c.ranges[s].second, depth + 1).view());
    }
    return digest(w.data());
}

std::optional<Digest> range_hash(Iter begin, Iter end, std::size_t depth)
{
    if (begin == end) return std::nullopt;
    return subtree_hash(begin, end, depth);
}

// First key at which two sorted ranges differ (by key or by value).
Divergence linear_diff(Iter lb, Iter le, Iter rb, Iter re)
{
    while (lb != le && rb != re && lb->first == rb->first && lb->second == rb->second) {
        ++lb;
        ++rb;
    }
    Divergence d;
    if (lb != le && (rb == re || lb->first < rb->first)) {
        d.key = lb->first;
        d.left_value = lb->second;
    } else if (rb != re && (lb == le || rb->first < lb->first)) {
        d.key = rb->first;
        d.right_value = rb->second;
    } else {
        d.key = lb->first;
        d.left_value = lb->second;
        d.right_value = rb->second;
    }
    return d;
}

}  // namespace

void MerkleMap::put(const Bytes& key, Bytes value)
{
    entries_[key] = std::move(value);
    root_cache_.reset();
}

void MerkleMap::erase(const Bytes& key)
{
    if (entries_.erase(key) != 0) root_cache_.reset();
}

const Bytes* MerkleMap::find(const Bytes& key) const
{
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

Digest MerkleMap::empty_root() { return digest("safius.merkle.empty"); }

Digest MerkleMap::root() const
{
    if (!root_cache_) {
        root_cache_ = entries_.empty() ? empty_root() : subtree_hash(entries_.begin(), entries_.end(), 0);
    }
    return *root_cache_;
}

std::optional<Divergence> first_divergence(const MerkleMap& left, const MerkleMap& right)
{
    if (left.root() == right.root()) return std::nullopt;

    Iter lb = left.entries().begin(), le = left.entries().end();
    Iter rb = right.entries().begin(), re = right.entries().end();
    std::vector<std::uint8_t> path;
    std::size_t depth = 0;
    for (;;) {
        // A collapsed leaf on either side ends the descent.
        std::size_t ln = std::distance(lb, le), rn = std::distance(rb, re);
        if (ln <= 1 || rn <= 1) {
            Divergence d = linear_diff(lb, le, rb, re);
            d.path = path;
            return d;
        }
        Children lc = split(lb, le, depth), rc = split(rb, re, depth);
        int chosen = -1;
        for (int s = 0; s < kSlots && chosen < 0; ++s) {
            auto lh = lc.present[s] ? range_hash(lc.ranges[s].first, lc.ranges[s].second, depth + 1) : std::nullopt;
            auto rh = rc.present[s] ? range_hash(rc.ranges[s].first, rc.ranges[s].second, depth + 1) : std::nullopt;
            if (lh != rh) chosen = s;
        }
        if (chosen < 0) {
            // Equal child hashes under unequal parents cannot happen without a collision.
            Divergence d = linear_diff(lb, le, rb, re);
            d.path = path;
            return d;
        }
        path.push_back(static_cast<std::uint8_t>(chosen));
        if (lc.present[chosen]) {
            lb = lc.ranges[chosen].first;
            le = lc.ranges[chosen].second;
        } else {
            lb = le = left.entries().end();
        }
        if (rc.present[chosen]) {
            rb = rc.ranges[chosen].first;
            re = rc.ranges[chosen].second;
        } else {
            rb = re = right.entries().end();
        }
        ++depth;
    }
}

Bytes RefcntTree::encode_pattern(const UidCounts& c)
{
    Writer w;
    w.u32(static_cast<std::uint32_t>(c.size()));
    for (auto [uid, n] : c) {
        w.u32(uid);
        w.u64(static_cast<std::uint64_t>(n));
    }
    return std::move(w).take();
}

UidCounts RefcntTree::decode_pattern(ByteView b)
{
    Reader r(b);
    UidCounts c;
    auto n = r.u32("pattern.size");
    for (std::uint32_t i = 0; i < n; ++i) {
        auto uid = r.u32("pattern.uid");
        c[uid] = static_cast<std::int64_t>(r.u64("pattern.count"));
    }
    r.expect_done("pattern");
    return c;
}

void RefcntTree::unref_pattern(const Digest& id)
{
    auto it = patterns_.find(id);
    if (it != patterns_.end() && --it->second.users == 0) patterns_.erase(it);
}

void RefcntTree::apply(const Digest& blknum, PrincipalId uid, std::int64_t delta)
{
    Bytes key = blknum.to_bytes();
    UidCounts counts;
    if (const Bytes* id = map_.find(key)) {
        Digest pid(*id);
        counts = patterns_.at(pid).counts;
        unref_pattern(pid);
    }
    auto& n = counts[uid];
    n += delta;
    if (n == 0) counts.erase(uid);
    if (counts.empty()) {
        map_.erase(key);
        return;
    }
    Bytes enc = encode_pattern(counts);
    Digest pid = digest(enc);
    auto& p = patterns_[pid];
    if (p.users++ == 0) p.counts = std::move(counts);
    map_.put(key, pid.to_bytes());
}

const UidCounts* RefcntTree::counts(const Digest& blknum) const
{
    const Bytes* id = map_.find(blknum.to_bytes());
    if (!id) return nullptr;
    return &patterns_.at(Digest(*id)).counts;
}

std::int64_t RefcntTree::count(const Digest& blknum, PrincipalId uid) const
{
    const UidCounts* c = counts(blknum);
    if (!c) return 0;
    auto it = c->find(uid);
    return it == c->end() ? 0 : it->second;
}

std::map<Digest, UidCounts> RefcntTree::snapshot() const
{
    std::map<Digest, UidCounts> out;
    for (const auto& [k, id] : map_.entries()) out[Digest(k)] = patterns_.at(Digest(id)).counts;
    return out;
}

}  // namespace safius
