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

#include <functional>
#include <optional>
#include <random>

#include "safius/crypto.hpp"
#include "safius/error.hpp"

namespace safius {

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n)
{
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

// The error code thrown by `f`, or nullopt if it returned.
inline std::optional<Errc> errc_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

struct HashAlgoGuard {
    explicit HashAlgoGuard(HashAlgo a) : prev(hash_algo()) { set_hash_algo(a); }
    ~HashAlgoGuard() { set_hash_algo(prev); }
    HashAlgo prev;
};

}  // namespace safius
