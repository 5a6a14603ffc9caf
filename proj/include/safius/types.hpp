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

#include <compare>
#include <cstdint>
#include <string>

#include "safius/crypto.hpp"

namespace safius {

using Uid = std::uint16_t;
using FsId = std::uint16_t;
using Nonce = std::uint64_t;

// Principals 1..0xffff are users; the two servers sit above that range.
constexpr PrincipalId kStorageServerPrincipal = 0x10000;
constexpr PrincipalId kLhashPrincipal = 0x10001;

// Globally unique without coordination: the creating node and user are part
// of the number.
struct InodeNumber {
    std::uint16_t node_id = 0;
    std::uint16_t owner_uid = 0;
    std::uint32_t local_seq = 0;

    std::uint64_t pack() const
    {
        return std::uint64_t(node_id) << 48 | std::uint64_t(owner_uid) << 32 | local_seq;
    }
    static InodeNumber unpack(std::uint64_t v)
    {
        return {static_cast<std::uint16_t>(v >> 48), static_cast<std::uint16_t>(v >> 32),
                static_cast<std::uint32_t>(v)};
    }
    std::string str() const
    {
        return std::to_string(node_id) + ":" + std::to_string(owner_uid) + ":" + std::to_string(local_seq);
    }

    friend auto operator<=>(const InodeNumber&, const InodeNumber&) = default;
};

// The i-tbl itself and the root directory live at fixed numbers.
constexpr InodeNumber kItblIno{0, 0, 0};
constexpr InodeNumber kRootIno{0, 0, 1};

// One committed version of one file. A zero inode_hash with a nonzero
// incarnation marks a deleted file.
struct Idata {
    Digest inode_hash;
    std::uint64_t incarnation = 0;

    bool exists() const { return !inode_hash.is_zero(); }
    friend bool operator==(const Idata&, const Idata&) = default;
};

enum class OpKind : std::uint8_t { Store = 1, Free = 2 };

inline const char* op_name(OpKind op) { return op == OpKind::Store ? "store" : "free"; }

}  // namespace safius
