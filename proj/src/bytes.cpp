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

#include "safius/bytes.hpp"

#include <array>

namespace safius {

std::string_view errc_name(Errc c)
{
    switch (c) {
    case Errc::Decode: return "Decode";
    case Errc::NotFound: return "NotFound";
    case Errc::AccessDenied: return "AccessDenied";
    case Errc::PermissionDenied: return "PermissionDenied";
    case Errc::DigestMismatch: return "DigestMismatch";
    case Errc::Replay: return "Replay";
    case Errc::NoSuchReference: return "NoSuchReference";
    case Errc::BadSignature: return "BadSignature";
    case Errc::UnknownPrincipal: return "UnknownPrincipal";
    case Errc::DecryptFailure: return "DecryptFailure";
    case Errc::IntegrityFailure: return "IntegrityFailure";
    case Errc::Reject: return "Reject";
    case Errc::StaleTxid: return "StaleTxid";
    case Errc::LockNotHeld: return "LockNotHeld";
    case Errc::LockBusy: return "LockBusy";
    case Errc::DeadlockTimeout: return "DeadlockTimeout";
    case Errc::UnknownInode: return "UnknownInode";
    case Errc::StaleFileHandle: return "StaleFileHandle";
    case Errc::Exists: return "Exists";
    case Errc::NotDirectory: return "NotDirectory";
    case Errc::IsDirectory: return "IsDirectory";
    case Errc::Unreachable: return "Unreachable";
    case Errc::SessionExhausted: return "SessionExhausted";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Config: return "Config";
    }
    return "Unknown";
}

std::string to_hex(ByteView data)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

namespace {
int nibble(char c)
{
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace

Bytes from_hex(std::string_view hex)
{
    Bytes out;
    int hi = -1;
    for (char c : hex) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
        int v = nibble(c);
        if (v < 0) raise(Errc::Decode, "invalid hex character");
        if (hi < 0) {
            hi = v;
        } else {
            out.push_back(static_cast<std::uint8_t>(hi << 4 | v));
            hi = -1;
        }
    }
    if (hi >= 0) raise(Errc::Decode, "odd number of hex digits");
    return out;
}

std::uint64_t Reader::get_le(int width, const char* field)
{
    if (data_.size() - pos_ < static_cast<std::size_t>(width)) fail(field, "truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
}

Bytes Reader::raw(std::size_t n, const char* field)
{
    if (data_.size() - pos_ < n) fail(field, "truncated");
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
}

Bytes Reader::bytes(const char* field)
{
    std::size_t at = pos_;
    auto n = u32(field);
    if (data_.size() - pos_ < n) {
        pos_ = at;
        fail(field, "length prefix exceeds buffer");
    }
    return raw(n, field);
}

void Reader::expect_done(const char* what) const
{
    if (!done()) fail(what, "trailing bytes");
}

void Reader::fail(const char* field, const std::string& why) const
{
    raise(Errc::Decode, std::string(field) + " at offset " + std::to_string(pos_) + ": " + why);
}

}  // namespace safius
