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
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "safius/error.hpp"

namespace safius {

// Simulated costs, in ticks. One tick stands for one millisecond.
struct CostTable {
    std::uint64_t sign = 80;
    std::uint64_t verify = 4;
    std::uint64_t hash_per_4k = 1;
    std::uint64_t message = 5;
};

// Thrown at an armed crash point. Unwinds the crashing actor's call stack;
// the harness then rebuilds that actor from its stable storage.
struct CrashSignal {
    std::string actor;
    std::string point;
};

struct PointHit {
    std::string actor;
    std::string point;
    std::uint64_t occurrence = 0;  // 1-based, per (actor, point) since recording began
    friend bool operator==(const PointHit&, const PointHit&) = default;
};

class Trace {
public:
    void add(std::string line) { lines_.push_back(std::move(line)); }
    const std::vector<std::string>& lines() const { return lines_; }
    std::string serialize() const;

private:
    std::vector<std::string> lines_;
};

// The deterministic world every actor runs in: logical clock, cost charging,
// named crash points, the message fabric, and the trace.
class Env {
public:
    explicit Env(CostTable costs = {}, std::uint64_t seed = 1);

    std::uint64_t now() const { return now_; }
    void advance(std::uint64_t ticks) { now_ += ticks; }
    const CostTable& costs() const { return costs_; }

    void charge_sign() { now_ += costs_.sign; }
    void charge_verify() { now_ += costs_.verify; }
    void charge_hash(std::size_t bytes) { now_ += costs_.hash_per_4k * ((bytes + 4095) / 4096); }
    void charge_message() { now_ += costs_.message; }

    // Crash point hook. Throws CrashSignal when this hit is armed.
    void point(const std::string& actor, const char* name);
    void arm_crash(PointHit at);
    void disarm();
    void start_recording();
    std::vector<PointHit> stop_recording();
    bool crash_fired() const { return fired_; }

    bool is_down(const std::string& actor) const { return down_.count(actor) != 0; }
    void set_down(const std::string& actor, bool down);

    // Synchronous request/reply. A crash of the callee surfaces to the caller
    // as Unreachable; a crash of anyone else keeps unwinding.
    template <typename F>
    auto call(const std::string& from, const std::string& to, const char* kind, F&& fn) -> decltype(fn())
    {
        if (is_down(to)) raise(Errc::Unreachable, to + " is down");
        charge_message();
        trace(from, std::string("call ") + kind, to);
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                charge_message();
            } else {
                auto r = fn();
                charge_message();
                return r;
            }
        } catch (const CrashSignal& c) {
            if (c.actor != to) throw;
            set_down(to, true);
            raise(Errc::Unreachable, to + " crashed at " + c.point);
        }
    }

    // One-way message; delivered immediately unless a delay rule applies.
    void post(const std::string& from, const std::string& to, const std::string& kind, std::function<void()> fn);
    void delay_next(const std::string& from, const std::string& to, const std::string& kind, std::uint64_t ticks);
    // Deliver delayed messages whose time has come (all of them for drain()).
    void pump();
    void drain();
    std::size_t in_flight() const { return queue_.size(); }

    void trace(const std::string& actor, const std::string& event, const std::string& detail = {});
    Trace& trace_log() { return trace_; }
    const Trace& trace_log() const { return trace_; }

    std::mt19937_64& rng() { return rng_; }

private:
    struct Delayed {
        std::uint64_t due;
        std::uint64_t seq;
        std::string from, to, kind;
        std::function<void()> fn;
    };
    struct DelayRule {
        std::string from, to, kind;
        std::uint64_t ticks;
    };
    void deliver(Delayed& d);

    CostTable costs_;
    std::uint64_t now_ = 0;
    std::mt19937_64 rng_;
    Trace trace_;

    std::set<std::string> down_;
    std::deque<Delayed> queue_;
    std::vector<DelayRule> delay_rules_;
    std::uint64_t seq_ = 0;

    bool recording_ = false;
    std::vector<PointHit> recorded_;
    bool armed_ = false;
    bool fired_ = false;
    PointHit armed_at_;
    std::map<std::pair<std::string, std::string>, std::uint64_t> counts_;
};

}  // namespace safius
