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


#include "safius/report.hpp"

#include <json.hpp>
#include <sstream>

namespace safius {

std::uint64_t Histogram::bucket_of(std::uint64_t v)
{
    // Two significant bits: 0,1,2,3,4,6,8,12,16,24,...
    if (v < 4) return v;
    int hi = 63 - __builtin_clzll(v);
    std::uint64_t top = std::uint64_t{1} << hi;
    std::uint64_t half = top >> 1;
    return v >= top + half ? top + half : top;
}

void Histogram::add(std::uint64_t v)
{
    ++buckets_[bucket_of(v)];
    ++count_;
}

void Report::counter(const std::string& name, std::uint64_t v)
{
    for (auto& [k, x] : counters)
        if (k == name) {
            x = v;
            return;
        }
    counters.emplace_back(name, v);
}

std::optional<std::uint64_t> Report::get(const std::string& name) const
{
    for (const auto& [k, x] : counters)
        if (k == name) return x;
    return std::nullopt;
}

void Report::check(const std::string& name, bool pass, std::string detail, std::optional<std::size_t> at)
{
    invariants.push_back(InvariantResult{name, pass, std::move(detail), at});
}

bool Report::ok() const
{
    for (const auto& i : invariants)
        if (!i.pass) return false;
    return true;
}

std::string Report::text() const
{
    std::ostringstream o;
    o << "report " << title << "\n";
    for (const auto& [k, v] : counters) o << "counter " << k << " " << v << "\n";
    for (const auto& [k, v] : notes) o << "note " << k << " " << v << "\n";
    if (latency) {
        o << "latency count=" << latency->count() << "\n";
        for (const auto& [b, n] : latency->buckets()) o << "latency.bucket " << b << " " << n << "\n";
    }
    for (const auto& v : verdicts) {
        o << "verdict kind=" << v.kind << " blk=" << v.blknum << " uid=" << v.uid << " verdict=\"" << v.verdict
          << "\" expected=\"" << v.expected << "\" correct=" << (v.correct ? 1 : 0)
          << " false_accusation=" << (v.false_accusation ? 1 : 0) << " in_window=" << (v.in_window ? 1 : 0)
          << " why=\"" << v.rationale << "\"\n";
    }
    for (const auto& i : invariants) {
        o << "invariant " << i.name << " " << (i.pass ? "PASS" : "FAIL");
        if (i.event_index) o << " at=" << *i.event_index;
        if (!i.detail.empty()) o << " " << i.detail;
        o << "\n";
    }
    o << "result " << (ok() ? "PASS" : "FAIL") << "\n";
    return o.str();
}

std::string Report::json() const
{
    nlohmann::ordered_json j;
    j["title"] = title;
    j["counters"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : counters) j["counters"][k] = v;
    j["notes"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : notes) j["notes"][k] = v;
    if (latency) {
        nlohmann::ordered_json h = nlohmann::ordered_json::array();
        for (const auto& [b, n] : latency->buckets()) h.push_back({{"bucket", b}, {"count", n}});
        j["latency"] = {{"count", latency->count()}, {"buckets", h}};
    }
    j["verdicts"] = nlohmann::ordered_json::array();
    for (const auto& v : verdicts)
        j["verdicts"].push_back({{"kind", v.kind},
                                 {"blknum", v.blknum},
                                 {"uid", v.uid},
                                 {"verdict", v.verdict},
                                 {"expected", v.expected},
                                 {"correct", v.correct},
                                 {"false_accusation", v.false_accusation},
                                 {"in_window", v.in_window},
                                 {"rationale", v.rationale}});
    j["invariants"] = nlohmann::ordered_json::array();
    for (const auto& i : invariants) {
        nlohmann::ordered_json r{{"name", i.name}, {"pass", i.pass}, {"detail", i.detail}};
        if (i.event_index) r["event_index"] = *i.event_index;
        j["invariants"].push_back(r);
    }
    j["ok"] = ok();
    return j.dump(2);
}

}  // namespace safius
