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

#include "safius/env.hpp"

#include <algorithm>

namespace safius {

std::string Trace::serialize() const
{
    std::string out;
    for (const auto& l : lines_) {
        out += l;
        out += '\n';
    }
    return out;
}

Env::Env(CostTable costs, std::uint64_t seed) : costs_(costs), rng_(seed) {}

void Env::point(const std::string& actor, const char* name)
{
    if (!recording_ && !armed_) return;
    auto n = ++counts_[{actor, name}];
    if (recording_) recorded_.push_back(PointHit{actor, name, n});
    if (armed_ && !fired_ && armed_at_.actor == actor && armed_at_.point == name && armed_at_.occurrence == n) {
        fired_ = true;
        armed_ = false;
        trace(actor, "crash", name);
        throw CrashSignal{actor, name};
    }
}

void Env::arm_crash(PointHit at)
{
    armed_ = true;
    fired_ = false;
    armed_at_ = std::move(at);
    counts_.clear();
}

void Env::disarm() { armed_ = false; }

void Env::start_recording()
{
    recording_ = true;
    recorded_.clear();
    counts_.clear();
}

std::vector<PointHit> Env::stop_recording()
{
    recording_ = false;
    return std::move(recorded_);
}

void Env::set_down(const std::string& actor, bool down)
{
    if (down) {
        down_.insert(actor);
        trace(actor, "down");
    } else if (down_.erase(actor) != 0) {
        trace(actor, "up");
    }
}

void Env::post(const std::string& from, const std::string& to, const std::string& kind, std::function<void()> fn)
{
    charge_message();
    for (auto it = delay_rules_.begin(); it != delay_rules_.end(); ++it) {
        if (it->from == from && it->to == to && it->kind == kind) {
            trace(from, "delay " + kind, to + " +" + std::to_string(it->ticks));
            queue_.push_back(Delayed{now_ + it->ticks, seq_++, from, to, kind, std::move(fn)});
            delay_rules_.erase(it);
            return;
        }
    }
    Delayed d{now_, seq_++, from, to, kind, std::move(fn)};
    deliver(d);
}

void Env::delay_next(const std::string& from, const std::string& to, const std::string& kind, std::uint64_t ticks)
{
    delay_rules_.push_back(DelayRule{from, to, kind, ticks});
}

void Env::deliver(Delayed& d)
{
    if (is_down(d.to)) {
        trace(d.from, "lost " + d.kind, d.to);
        return;
    }
    try {
        d.fn();
    } catch (const CrashSignal& c) {
        if (c.actor != d.to) throw;
        set_down(d.to, true);
    }
}

void Env::pump()
{
    std::stable_sort(queue_.begin(), queue_.end(),
                     [](const Delayed& a, const Delayed& b) { return a.due != b.due ? a.due < b.due : a.seq < b.seq; });
    while (!queue_.empty() && queue_.front().due <= now_) {
        Delayed d = std::move(queue_.front());
        queue_.pop_front();
        trace(d.to, "deliver " + d.kind, d.from);
        deliver(d);
    }
}

void Env::drain()
{
    while (!queue_.empty()) {
        std::stable_sort(queue_.begin(), queue_.end(), [](const Delayed& a, const Delayed& b) {
            return a.due != b.due ? a.due < b.due : a.seq < b.seq;
        });
        if (queue_.front().due > now_) now_ = queue_.front().due;
        pump();
    }
}

void Env::trace(const std::string& actor, const std::string& event, const std::string& detail)
{
    std::string line = "t=" + std::to_string(now_) + " " + actor + " " + event;
    if (!detail.empty()) {
        line += ' ';
        line += detail;
    }
    trace_.add(std::move(line));
}

}  // namespace safius
