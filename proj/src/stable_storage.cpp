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

#include "safius/stable_storage.hpp"

#include <fstream>
#include <iterator>

namespace safius {

void StableStorage::append(const std::string& file, Bytes record)
{
    files_[file].push_back(std::move(record));
    ++writes_;
}

const std::vector<Bytes>& StableStorage::records(const std::string& file) const
{
    static const std::vector<Bytes> empty;
    auto it = files_.find(file);
    return it == files_.end() ? empty : it->second;
}

void StableStorage::truncate(const std::string& file)
{
    files_.erase(file);
    ++writes_;
}

void StableStorage::replace(const std::string& file, std::vector<Bytes> records)
{
    if (records.empty())
        files_.erase(file);
    else
        files_[file] = std::move(records);
    ++writes_;
}

void StableStorage::put(const std::string& key, Bytes value)
{
    kv_[key] = std::move(value);
    ++writes_;
}

std::optional<Bytes> StableStorage::get(const std::string& key) const
{
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    return it->second;
}

void StableStorage::erase(const std::string& key)
{
    kv_.erase(key);
    ++writes_;
}

std::vector<std::string> StableStorage::keys_with_prefix(const std::string& prefix) const
{
    std::vector<std::string> out;
    for (auto it = kv_.lower_bound(prefix); it != kv_.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it)
        out.push_back(it->first);
    return out;
}

Bytes StableStorage::image() const
{
    Writer w;
    w.u32(static_cast<std::uint32_t>(files_.size()));
    for (const auto& [name, recs] : files_) {
        w.bytes(as_view(name));
        w.u32(static_cast<std::uint32_t>(recs.size()));
        for (const auto& r : recs) w.bytes(r);
    }
    w.u32(static_cast<std::uint32_t>(kv_.size()));
    for (const auto& [k, v] : kv_) {
        w.bytes(as_view(k));
        w.bytes(v);
    }
    return std::move(w).take();
}

StableStorage StableStorage::from_image(ByteView image)
{
    StableStorage s;
    Reader r(image);
    auto nfiles = r.u32("file_count");
    for (std::uint32_t i = 0; i < nfiles; ++i) {
        auto name = to_string(r.bytes("file.name"));
        auto n = r.u32("file.records");
        auto& recs = s.files_[name];
        for (std::uint32_t j = 0; j < n; ++j) recs.push_back(r.bytes("file.record"));
    }
    auto nkv = r.u32("kv_count");
    for (std::uint32_t i = 0; i < nkv; ++i) {
        auto k = to_string(r.bytes("kv.key"));
        s.kv_[k] = r.bytes("kv.value");
    }
    r.expect_done("stable_storage");
    return s;
}

void StableStorage::save(const std::string& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    auto img = image();
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    if (!out) raise(Errc::InvalidArgument, "cannot write " + path);
}

StableStorage StableStorage::load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::NotFound, "cannot read " + path);
    Bytes img((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_image(img);
}

}  // namespace safius
