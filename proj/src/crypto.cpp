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

#include "safius/crypto.hpp"

#include <atomic>

#include <openssl/evp.h>
#include <openssl/hmac.h>

namespace safius {

namespace {

std::atomic<HashAlgo> g_algo{HashAlgo::Sha256};

struct PkeyFree {
    void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
struct MdCtxFree {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyFree>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxFree>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

constexpr std::size_t kNonceLen = 12;
constexpr std::size_t kTagLen = 16;

Bytes sha256(ByteView data)
{
    Bytes out(32);
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
    return out;
}

}  // namespace

void set_hash_algo(HashAlgo algo) { g_algo.store(algo); }
HashAlgo hash_algo() { return g_algo.load(); }
std::size_t digest_width() { return hash_algo() == HashAlgo::Sha1 ? 20 : 32; }

Digest::Digest(ByteView raw) : size_(static_cast<std::uint8_t>(raw.size()))
{
    if (raw.size() > kMaxWidth || raw.empty()) raise(Errc::Decode, "digest width " + std::to_string(raw.size()));
    std::memcpy(bytes_.data(), raw.data(), raw.size());
}

bool Digest::is_zero() const
{
    for (std::size_t i = 0; i < size_; ++i)
        if (bytes_[i] != 0) return false;
    return true;
}

Digest digest(ByteView data)
{
    const EVP_MD* md = hash_algo() == HashAlgo::Sha1 ? EVP_sha1() : EVP_sha256();
    std::array<std::uint8_t, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr) != 1)
        throw std::runtime_error("EVP_Digest failed");
    return Digest(ByteView(out.data(), len));
}

Bytes hmac_sha256(ByteView key, ByteView data)
{
    Bytes out(32);
    unsigned int len = 0;
    HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), out.data(), &len);
    return out;
}

struct KeyRegistry::Impl {
    struct Entry {
        PkeyPtr key;
        Bytes public_raw;
    };
    std::map<PrincipalId, Entry> keys;

    const Entry& at(PrincipalId p) const
    {
        auto it = keys.find(p);
        if (it == keys.end()) raise(Errc::UnknownPrincipal, "principal " + std::to_string(p));
        return it->second;
    }
};

KeyRegistry::KeyRegistry() : impl_(std::make_unique<Impl>()) {}
KeyRegistry::~KeyRegistry() = default;
KeyRegistry::KeyRegistry(KeyRegistry&&) noexcept = default;
KeyRegistry& KeyRegistry::operator=(KeyRegistry&&) noexcept = default;

void KeyRegistry::generate(PrincipalId principal, std::uint64_t seed)
{
    Writer w;
    w.raw(as_view("safius.ed25519"));
    w.u64(seed);
    w.u32(principal);
    Bytes priv = sha256(w.data());
    PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, priv.data(), priv.size()));
    if (!key) throw std::runtime_error("ed25519 key generation failed");
    Bytes pub(32);
    std::size_t publen = pub.size();
    EVP_PKEY_get_raw_public_key(key.get(), pub.data(), &publen);
    impl_->keys[principal] = Impl::Entry{std::move(key), std::move(pub)};
}

bool KeyRegistry::contains(PrincipalId principal) const { return impl_->keys.count(principal) != 0; }

KeyRef KeyRegistry::public_key(PrincipalId principal) const
{
    return KeyRef{principal, impl_->at(principal).public_raw};
}

Signature KeyRegistry::sign(PrincipalId principal, const Digest& d) const
{
    const auto& e = impl_->at(principal);
    MdCtxPtr ctx(EVP_MD_CTX_new());
    Bytes sig(64);
    std::size_t siglen = sig.size();
    if (EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, e.key.get()) != 1 ||
        EVP_DigestSign(ctx.get(), sig.data(), &siglen, d.data(), d.size()) != 1)
        throw std::runtime_error("ed25519 sign failed");
    sig.resize(siglen);
    return Signature{std::move(sig), principal};
}

bool KeyRegistry::verify(PrincipalId principal, const Digest& d, const Signature& s) const
{
    auto it = impl_->keys.find(principal);
    if (it == impl_->keys.end() || s.signer != principal) return false;
    MdCtxPtr ctx(EVP_MD_CTX_new());
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, it->second.key.get()) != 1) return false;
    return EVP_DigestVerify(ctx.get(), s.bytes.data(), s.bytes.size(), d.data(), d.size()) == 1;
}

bool KeyRegistry::verify(const KeyRef& key, const Digest& d, const Signature& s)
{
    if (s.signer != key.principal || key.public_material.size() != 32) return false;
    PkeyPtr pub(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, key.public_material.data(),
                                            key.public_material.size()));
    if (!pub) return false;
    MdCtxPtr ctx(EVP_MD_CTX_new());
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pub.get()) != 1) return false;
    return EVP_DigestVerify(ctx.get(), s.bytes.data(), s.bytes.size(), d.data(), d.size()) == 1;
}

FgrpKey FgrpKey::derive(FgrpId id, std::uint64_t seed)
{
    Writer w;
    w.raw(as_view("safius.fgrp"));
    w.u64(seed);
    w.u32(id);
    return FgrpKey{id, sha256(w.data())};
}

Bytes encrypt(const FgrpKey& key, ByteView plaintext)
{
    Digest pd = digest(plaintext);
    Bytes nonce = hmac_sha256(key.material, pd.view());
    nonce.resize(kNonceLen);

    Writer aad;
    aad.u32(key.fgrp_id);

    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    Bytes out(kNonceLen + plaintext.size() + kTagLen);
    std::memcpy(out.data(), nonce.data(), kNonceLen);
    int len = 0;
    bool ok = EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.material.data(), nonce.data()) == 1 &&
              EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data().data(), static_cast<int>(aad.data().size())) == 1 &&
              EVP_EncryptUpdate(ctx.get(), out.data() + kNonceLen, &len, plaintext.data(),
                                static_cast<int>(plaintext.size())) == 1 &&
              EVP_EncryptFinal_ex(ctx.get(), out.data() + kNonceLen + len, &len) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen,
                                  out.data() + kNonceLen + plaintext.size()) == 1;
    if (!ok) throw std::runtime_error("aes-gcm encrypt failed");
    return out;
}

Bytes decrypt(const FgrpKey& key, ByteView ciphertext)
{
    if (ciphertext.size() < kNonceLen + kTagLen) raise(Errc::DecryptFailure, "ciphertext too short");
    std::size_t body = ciphertext.size() - kNonceLen - kTagLen;
    Writer aad;
    aad.u32(key.fgrp_id);

    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    Bytes out(body);
    Bytes tag(ciphertext.begin() + kNonceLen + body, ciphertext.end());
    int len = 0;
    bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.material.data(), ciphertext.data()) == 1 &&
              EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data().data(), static_cast<int>(aad.data().size())) == 1 &&
              EVP_DecryptUpdate(ctx.get(), out.data(), &len, ciphertext.data() + kNonceLen, static_cast<int>(body)) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen, tag.data()) == 1;
    if (!ok || EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &len) != 1)
        raise(Errc::DecryptFailure, "authentication failed for fgrp " + std::to_string(key.fgrp_id));
    return out;
}

const FgrpKey& FgrpKeyring::at(FgrpId id) const
{
    auto it = keys_.find(id);
    if (it == keys_.end()) raise(Errc::DecryptFailure, "no key for fgrp " + std::to_string(id));
    return it->second;
}

}  // namespace safius
