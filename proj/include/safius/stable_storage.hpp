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
#include <optional>
#include <string>
#include <vector>

#include "safius/bytes.hpp"

namespace safius {

// Crash-surviving storage for one actor: append-only record files plus a
// small key-value area. Each append or put is atomic. The harness owns these
// objects so that an actor can be torn down and rebuilt from them.
class StableStorage {
public:
    void append(const std::string& file, Bytes record);
    const std::vector<Bytes>& records(const std::string& file) const;
    void truncate(const std::string& file);
    // Atomically replaces a file's contents.
    void replace(const std::string& file, std::vector<Bytes> records);

    void put(const std::string& key, Bytes value);
    std::optional<Bytes> get(const std::string& key) const;
    void erase(const std::string& key);
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    std::uint64_t writes() const { return writes_; }

    // Canonical image; equal images mean equal durable state.
    Bytes image() const;
    static StableStorage from_image(ByteView image);
    void save(const std::string& path) const;
    static StableStorage load(const std::string& path);

private:
    std::map<std::string, std::vector<Bytes>> files_;
    std::map<std::string, Bytes> kv_;
    std::uint64_t writes_ = 0;
};

}  // namespace safius
