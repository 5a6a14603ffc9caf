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

#include <array>
#include <cstring>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "safius/bytes.hpp"

namespace safius {

enum class HashAlgo { Sha256, Sha1 };

// Process-wide hash selection. Set once before any actor is built.
void set_hash_algo(HashAlgo algo);
HashAlgo hash_algo();
std::size_t digest_width();

class Digest {
public:
    static constexpr std::size_t kMaxWidth = 32;

    // All-zero digest of the configured width; used as the "no block" pointer.
    Digest() : size_(static_cast<std::uint8_t>(digest_width())) {}
    explicit Digest(ByteView raw);

    static Digest zero() { return Digest(); }
    bool is_zero() const;

    std::size_t size() const { return size_; }
    const std::uint8_t* data() const { return bytes_.data(); }
    ByteView view() const { return {bytes_.data(), size_}; }
    Bytes to_bytes() const { return Bytes(bytes_.begin(), bytes_.begin() + size_); }
    std::string hex() const { return to_hex(view()); }
    std::string short_hex() const { return hex().substr(0, 12); }

    friend bool operator==(const Digest& a, const Digest& b)
    {
        return a.size_ == b.size_ && a.bytes_ == b.bytes_;
    }
    friend auto operator<=>(const Digest& a, const Digest& b)
    {
        if (auto c = a.size_ <=> b.size_; c != 0) return c;
        return a.bytes_ <=> b.bytes_;
    }

private:
    std::array<std::uint8_t, kMaxWidth> bytes_{};
    std::uint8_t size_;
};

Digest digest(ByteView data);
inline Digest digest(std::string_view s) { return digest(as_view(s)); }
Bytes hmac_sha256(ByteView key, ByteView data);

struct DigestHash {
    std::size_t operator()(const Digest& d) const noexcept
    {
        std::size_t h;
        std::memcpy(&h, d.data(), sizeof h);
        return h;
    }
};

using PrincipalId = std::uint32_t;

struct KeyRef {
    PrincipalId principal = 0;
    Bytes public_material;
};

struct Signature {
    Bytes bytes;
    PrincipalId signer = 0;

    friend bool operator==(const Signature&, const Signature&) = default;
};

// Ed25519 key pairs per principal. Keys are derived from a seed so that a
// deployment can be rebuilt bit-identically.
class KeyRegistry {
public:
    KeyRegistry();
    ~KeyRegistry();
    KeyRegistry(KeyRegistry&&) noexcept;
    KeyRegistry& operator=(KeyRegistry&&) noexcept;

    void generate(PrincipalId principal, std::uint64_t seed);
    bool contains(PrincipalId principal) const;
    KeyRef public_key(PrincipalId principal) const;

    Signature sign(PrincipalId principal, const Digest& d) const;
    bool verify(PrincipalId principal, const Digest& d, const Signature& s) const;
    static bool verify(const KeyRef& key, const Digest& d, const Signature& s);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

using FgrpId = std::uint32_t;

struct FgrpKey {
    FgrpId fgrp_id = 0;
    Bytes material;  // 32 bytes, AES-256

    static FgrpKey derive(FgrpId id, std::uint64_t seed);
};

// Deterministic AES-256-GCM: the nonce is derived from the key and the
// plaintext digest, so equal plaintexts under one key give equal ciphertexts.
// Layout: nonce(12) || ciphertext || tag(16).
Bytes encrypt(const FgrpKey& key, ByteView plaintext);
Bytes decrypt(const FgrpKey& key, ByteView ciphertext);

class FgrpKeyring {
public:
    void add(FgrpKey key) { keys_[key.fgrp_id] = std::move(key); }
    bool contains(FgrpId id) const { return keys_.count(id) != 0; }
    const FgrpKey& at(FgrpId id) const;

private:
    std::map<FgrpId, FgrpKey> keys_;
};

}  // namespace safius
