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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "safius/error.hpp"

namespace safius {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

inline ByteView as_view(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
inline Bytes to_bytes(std::string_view s)
{
    return Bytes(s.begin(), s.end());
}
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

// Little-endian fixed-width writer. Byte strings are u32-length prefixed.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void raw(ByteView b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void bytes(ByteView b)
    {
        u32(static_cast<std::uint32_t>(b.size()));
        raw(b);
    }

    const Bytes& data() const& { return buf_; }
    Bytes take() && { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int width)
    {
        for (int i = 0; i < width; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    Bytes buf_;
};

// Bounds-checked reader; every failure names the field and byte offset.
class Reader {
public:
    explicit Reader(ByteView data) : data_(data) {}

    std::uint8_t u8(const char* field) { return static_cast<std::uint8_t>(get_le(1, field)); }
    std::uint16_t u16(const char* field) { return static_cast<std::uint16_t>(get_le(2, field)); }
    std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get_le(4, field)); }
    std::uint64_t u64(const char* field) { return get_le(8, field); }
    Bytes raw(std::size_t n, const char* field);
    Bytes bytes(const char* field);

    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    void expect_done(const char* what) const;
    [[noreturn]] void fail(const char* field, const std::string& why) const;

private:
    std::uint64_t get_le(int width, const char* field);
    ByteView data_;
    std::size_t pos_ = 0;
};

}  // namespace safius
