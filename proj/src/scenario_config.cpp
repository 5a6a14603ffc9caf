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


#include "safius/scenario_config.hpp"

#include <fstream>
#include <sstream>

namespace safius {

std::optional<Errc> parse_errc(const std::string& name)
{
    for (int i = 0; i <= static_cast<int>(Errc::Config); ++i)
        if (errc_name(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
    return std::nullopt;
}

namespace {

[[noreturn]] void bad(int line, const std::string& why) { raise(Errc::Config, "line " + std::to_string(line) + ": " + why); }

std::uint64_t number(int line, const std::string& s)
{
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        bad(line, "expected a number, got '" + s + "'");
    }
    if (used != s.size()) bad(line, "expected a number, got '" + s + "'");
    return v;
}

std::vector<std::string> words(const std::string& l)
{
    std::vector<std::string> out;
    std::istringstream in(l);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path);
    if (!in) raise(Errc::Config, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// w[0] is "fault"; `at` is the default position.
Fault parse_fault(int line, std::vector<std::string> w, std::optional<std::size_t> at)
{
    Fault f;
    f.line = line;
    std::size_t i = 1;
    if (i < w.size() && w[i].size() > 1 && w[i][0] == '@') {
        f.at = number(line, w[i].substr(1));
        ++i;
    } else if (at) {
        f.at = *at;
    } else {
        bad(line, "fault needs a position (@N)");
    }
    if (i >= w.size()) bad(line, "fault needs a kind");
    auto kind = parse_fault_kind(w[i]);
    if (!kind) bad(line, "unknown fault '" + w[i] + "'");
    f.kind = *kind;
    std::vector<std::string> a(w.begin() + static_cast<long>(i) + 1, w.end());
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (a.size() < lo || a.size() > hi) bad(line, std::string(fault_kind_name(f.kind)) + ": wrong number of arguments");
    };
    switch (f.kind) {
    case FaultKind::DropBlock:
    case FaultKind::ReturnNotFound:
        need(1, 2);
        f.path = a[0];
        if (a.size() > 1) f.block = number(line, a[1]);
        break;
    case FaultKind::CorruptBytes:
        need(2, 3);
        f.path = a[0];
        f.bit = number(line, a[1]);
        if (a.size() > 2) f.block = number(line, a[2]);
        break;
    case FaultKind::RefuseGrant:
    case FaultKind::ForgeCharge:
        need(1, 1);
        f.uid = static_cast<PrincipalId>(number(line, a[0]));
        break;
    case FaultKind::ForgeClaim:
        need(2, 3);
        f.uid = static_cast<PrincipalId>(number(line, a[0]));
        f.path = a[1];
        if (a.size() > 2) f.block = number(line, a[2]);
        break;
    case FaultKind::CrashActor:
        need(2, 3);
        f.actor = a[0];
        f.point = a[1];
        if (a.size() > 2) f.occurrence = number(line, a[2]);
        break;
    case FaultKind::DelayMessage:
        need(4, 4);
        f.from = a[0];
        f.to = a[1];
        f.message = a[2];
        f.ticks = number(line, a[3]);
        break;
    }
    return f;
}

}  // namespace

Scenario parse_scenario(const std::string& text)
{
    Scenario sc;
    bool nodes_given = false, groups_given = false;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
        auto w = words(raw);
        if (w.empty()) continue;
        const std::string& k = w[0];
        auto want = [&](std::size_t n) {
            if (w.size() != n) bad(line, k + " takes " + std::to_string(n - 1) + " argument(s)");
        };
        if (k == "name") {
            want(2);
            sc.name = w[1];
        } else if (k == "seed") {
            want(2);
            sc.seed = number(line, w[1]);
        } else if (k == "node") {
            if (w.size() < 3) bad(line, "node needs an id and at least one uid");
            if (!nodes_given) sc.deploy.nodes.clear();
            nodes_given = true;
            NodeSpec n;
            n.id = static_cast<FsId>(number(line, w[1]));
            if (n.id == 0) bad(line, "node ids start at 1");
            for (std::size_t i = 2; i < w.size(); ++i) n.uids.insert(static_cast<PrincipalId>(number(line, w[i])));
            sc.deploy.nodes.push_back(n);
        } else if (k == "group") {
            if (w.size() < 2) bad(line, "group needs an id");
            if (!groups_given) sc.deploy.groups.clear();
            groups_given = true;
            GroupSpec g;
            g.id = static_cast<FgrpId>(number(line, w[1]));
            if (g.id == 0) bad(line, "group 0 is reserved");
            std::set<PrincipalId>* into = nullptr;
            for (std::size_t i = 2; i < w.size(); ++i) {
                if (w[i] == "writers") into = &g.writers;
                else if (w[i] == "readers") into = &g.readers;
                else if (!into) bad(line, "expected 'writers' or 'readers'");
                else into->insert(static_cast<PrincipalId>(number(line, w[i])));
            }
            sc.deploy.groups.push_back(g);
        } else if (k == "root-group") {
            want(2);
            sc.deploy.root_fgrp = static_cast<FgrpId>(number(line, w[1]));
        } else if (k == "admin") {
            want(2);
            sc.deploy.admin = static_cast<PrincipalId>(number(line, w[1]));
        } else if (k == "mode") {
            want(2);
            try {
                sc.deploy.vm.mode = parse_sign_mode(w[1]);
            } catch (const Error&) {
                bad(line, "unknown signing mode '" + w[1] + "'");
            }
        } else if (k == "threshold") {
            want(2);
            sc.deploy.vm.threshold = number(line, w[1]);
            if (sc.deploy.vm.threshold == 0) bad(line, "threshold must be positive");
        } else if (k == "timeout") {
            want(2);
            sc.deploy.vm.timeout = number(line, w[1]);
        } else if (k == "deadline") {
            want(2);
            sc.deploy.server.pending_deadline = number(line, w[1]);
        } else if (k == "checkpoint-every") {
            want(2);
            sc.deploy.lhash.checkpoint_every = number(line, w[1]);
        } else if (k == "lock-drop") {
            want(2);
            sc.deploy.lock_drop_interval = number(line, w[1]);
        } else if (k == "quiesce") {
            want(2);
            if (w[1] != "on" && w[1] != "off") bad(line, "quiesce is on or off");
            sc.quiesce_at_end = w[1] == "on";
        } else if (k == "op" || k == "do") {
            WorkOp op;
            op.line = line;
            std::size_t i = 1;
            if (k == "op") {
                if (w.size() < 4) bad(line, "op needs a node, a uid and a verb");
                op.node = static_cast<FsId>(number(line, w[1]));
                op.uid = static_cast<PrincipalId>(number(line, w[2]));
                if (op.node == 0) bad(line, "node ids start at 1");
                i = 3;
            } else if (w.size() < 2) {
                bad(line, "do needs a verb");
            }
            op.verb = w[i++];
            for (; i < w.size(); ++i) {
                const std::string& x = w[i];
                if (x.size() > 1 && x[0] == '=') op.expect_value = x.substr(1);
                else if (x.size() > 1 && x[0] == '!') {
                    op.expect_error = parse_errc(x.substr(1));
                    if (!op.expect_error) bad(line, "unknown error name '" + x.substr(1) + "'");
                } else if (x == "=") {
                    op.expect_value = "";
                } else {
                    op.args.push_back(x);
                }
            }
            if (k == "do" && op.verb == "interest") {
                if (sc.interest) bad(line, "only one commit of interest");
                sc.interest = sc.ops.size();
            }
            sc.ops.push_back(std::move(op));
        } else if (k == "fault") {
            sc.faults.faults.push_back(parse_fault(line, w, sc.ops.size()));
        } else {
            bad(line, "unknown directive '" + k + "'");
        }
    }
    std::set<PrincipalId> placed;
    for (const auto& n : sc.deploy.nodes)
        for (PrincipalId u : n.uids) {
            if (u == 0 || u > 0xffff) bad(line, "uid " + std::to_string(u) + " out of range");
            if (!placed.insert(u).second) bad(line, "uid " + std::to_string(u) + " is on two nodes");
        }
    if (!placed.count(sc.deploy.admin)) raise(Errc::Config, "admin uid " + std::to_string(sc.deploy.admin) + " is on no node");
    bool root_ok = false;
    for (const auto& g : sc.deploy.groups) root_ok = root_ok || g.id == sc.deploy.root_fgrp;
    if (!root_ok) raise(Errc::Config, "root group " + std::to_string(sc.deploy.root_fgrp) + " is not defined");
    for (const auto& op : sc.ops) {
        if (!op.node) continue;
        bool found = false;
        for (const auto& n : sc.deploy.nodes)
            if (n.id == op.node) found = n.uids.count(op.uid) != 0;
        if (!found) bad(op.line, "uid " + std::to_string(op.uid) + " is not on node " + std::to_string(op.node));
    }
    return sc;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(slurp(path)); }

FaultPlan parse_fault_plan(const std::string& text)
{
    FaultPlan plan;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
        auto w = words(raw);
        if (w.empty()) continue;
        if (w[0] != "fault") bad(line, "only fault lines belong in a fault plan");
        plan.faults.push_back(parse_fault(line, w, std::nullopt));
    }
    return plan;
}

FaultPlan load_fault_plan(const std::string& path) { return parse_fault_plan(slurp(path)); }

}  // namespace safius
