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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace safius {

struct InvariantResult {
    std::string name;
    bool pass = true;
    std::string detail;
    std::optional<std::size_t> event_index;  // trace line where it failed
};

struct VerdictRecord {
    std::string kind;
    std::string blknum;  // short hex
    std::uint32_t uid = 0;
    std::string verdict;
    std::string expected;
    std::string rationale;
    bool correct = true;
    bool false_accusation = false;
    bool in_window = false;
};

// Log-linear latency histogram in ticks.
class Histogram {
public:
    void add(std::uint64_t v);
    const std::map<std::uint64_t, std::uint64_t>& buckets() const { return buckets_; }
    std::uint64_t count() const { return count_; }
    static std::uint64_t bucket_of(std::uint64_t v);

private:
    std::map<std::uint64_t, std::uint64_t> buckets_;
    std::uint64_t count_ = 0;
};

struct Report {
    std::string title;
    std::vector<std::pair<std::string, std::uint64_t>> counters;
    std::optional<Histogram> latency;
    std::vector<InvariantResult> invariants;
    std::vector<VerdictRecord> verdicts;
    std::vector<std::pair<std::string, std::string>> notes;

    void counter(const std::string& name, std::uint64_t v);
    std::optional<std::uint64_t> get(const std::string& name) const;
    void check(const std::string& name, bool pass, std::string detail = {}, std::optional<std::size_t> at = {});
    void note(const std::string& key, std::string value) { notes.emplace_back(key, std::move(value)); }
    bool ok() const;

    std::string text() const;
    std::string json() const;
};

}  // namespace safius
