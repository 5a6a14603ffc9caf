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


#include "safius/bench.hpp"

#include <fstream>
#include <sstream>

#include "safius/scenario_config.hpp"

namespace safius {

namespace {

[[noreturn]] void bad(int line, const std::string& why) { raise(Errc::Config, "line " + std::to_string(line) + ": " + why); }

Bytes random_bytes(std::mt19937_64& rng, std::size_t n)
{
    Bytes b(n);
    for (std::size_t i = 0; i < n; i += 8) {
        std::uint64_t x = rng();
        for (std::size_t k = 0; k < 8 && i + k < n; ++k) b[i + k] = static_cast<std::uint8_t>(x >> (8 * k));
    }
    return b;
}

DeploymentConfig single_node(const BenchConfig& cfg)
{
    DeploymentConfig dc;
    dc.nodes = {NodeSpec{1, {1}}};
    dc.groups = {GroupSpec{1, {1}, {1}}};
    dc.vm.mode = cfg.mode;
    dc.vm.threshold = cfg.threshold;
    // Batches close on the threshold only; the timer never fires mid-run.
    dc.vm.timeout = std::uint64_t{1} << 40;
    dc.server.pending_deadline = std::uint64_t{1} << 41;
    return dc;
}

}  // namespace

BenchConfig parse_bench_config(const std::string& text)
{
    BenchConfig c;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
        std::istringstream ws(raw);
        std::string key, value, extra;
        if (!(ws >> key)) continue;
        if (!(ws >> value) || (ws >> extra)) bad(line, key + " takes one value");
        if (key == "workload") {
            if (value != "stores" && value != "postmark") bad(line, "workload is stores or postmark");
            c.workload = value;
            continue;
        }
        if (key == "mode") {
            try {
                c.mode = parse_sign_mode(value);
            } catch (const Error&) {
                bad(line, "unknown signing mode '" + value + "'");
            }
            continue;
        }
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            v = std::stoull(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size() || v == 0) bad(line, key + " needs a positive number");
        if (key == "threshold") c.threshold = v;
        else if (key == "seed") c.seed = v;
        else if (key == "stores") c.stores = v;
        else if (key == "files") c.files = v;
        else if (key == "size-min") c.size_min = v;
        else if (key == "size-max") c.size_max = v;
        else if (key == "transactions") c.transactions = v;
        else if (key == "read-size") c.read_size = v;
        else if (key == "write-size") c.write_size = v;
        else if (key == "subdirs") c.subdirs = v;
        else bad(line, "unknown key '" + key + "'");
    }
    if (c.size_min > c.size_max) raise(Errc::Config, "size-min exceeds size-max");
    return c;
}

BenchConfig load_bench_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) raise(Errc::Config, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_bench_config(ss.str());
}

StoreBench run_store_bench(const BenchConfig& cfg)
{
    Deployment d(single_node(cfg), cfg.seed);
    d.format();
    VolumeManager& vm = d.fs(1).vm();
    vm.flush_all();
    d.env.drain();
    const VmCounters base = vm.counters();
    const InodeNumber ino{1, 1, kScratchSeq};
    std::mt19937_64 rng(cfg.seed);
    StoreBench out;
    out.latencies.reserve(cfg.stores);
    for (std::size_t i = 0; i < cfg.stores; ++i) {
        Bytes data = random_bytes(rng, kBlockSize);
        std::uint64_t t0 = d.env.now();
        vm.vm_write(data, ino, 1, 1);
        std::uint64_t lat = d.env.now() - t0;
        out.latencies.push_back(lat);
        out.histogram.add(lat);
        if (lat >= d.env.costs().sign) out.spike_ops.push_back(i);
        if (cfg.mode == SignMode::Async && vm.live_entries() == 0) vm.compact({});
    }
    std::uint64_t before_final = vm.counters().sign_calls;
    vm.flush_all();
    d.env.drain();
    out.final_flush_signs = vm.counters().sign_calls - before_final;
    out.vm = vm.counters();
    out.vm.sign_calls -= base.sign_calls;
    out.vm.verify_calls -= base.verify_calls;
    out.vm.hotpath_crypto_calls -= base.hotpath_crypto_calls;
    out.vm.ops -= base.ops;
    out.vm.threshold_flushes -= base.threshold_flushes;
    out.vm.flushes -= base.flushes;
    out.completed_batches = out.vm.threshold_flushes;

    std::uint64_t low_max = 0, high_min = ~std::uint64_t{0};
    std::size_t k = 0;
    for (std::size_t i = 0; i < out.latencies.size(); ++i) {
        bool spike = k < out.spike_ops.size() && out.spike_ops[k] == i;
        if (spike) {
            high_min = std::min(high_min, out.latencies[i]);
            ++k;
        } else {
            low_max = std::max(low_max, out.latencies[i]);
        }
    }
    out.low_max = low_max;
    out.high_min = out.spike_ops.empty() ? 0 : high_min;
    bool two = !out.spike_ops.empty() && out.spike_ops.size() < out.latencies.size();
    out.bimodal = two && out.high_min >= 4 * std::max<std::uint64_t>(low_max, 1);
    out.periodic = !out.spike_ops.empty();
    for (std::size_t j = 0; j < out.spike_ops.size(); ++j)
        out.periodic = out.periodic && out.spike_ops[j] == (j + 1) * cfg.threshold - 1;
    return out;
}

PostmarkResult run_postmark(const BenchConfig& cfg)
{
    Deployment d(single_node(cfg), cfg.seed);
    d.format();
    Fileserver& fs = d.fs(1);
    std::mt19937_64 rng(cfg.seed);
    auto pick = [&](std::uint64_t n) { return n ? rng() % n : 0; };
    PostmarkResult out;
    auto timed = [&](auto&& fn) {
        std::uint64_t t0 = d.env.now();
        fn();
        out.histogram.add(d.env.now() - t0);
    };
    for (std::size_t s = 0; s < cfg.subdirs; ++s) fs.mkdir("/d" + std::to_string(s), 1, 1);
    fs.commit();
    std::vector<std::string> live;
    std::size_t next = 0;
    auto create = [&] {
        std::string p = "/d" + std::to_string(next % cfg.subdirs) + "/f" + std::to_string(next);
        ++next;
        InodeNumber ino = fs.create(p, 1, 1);
        std::size_t size = cfg.size_min + pick(cfg.size_max - cfg.size_min + 1);
        fs.write(ino, 0, random_bytes(rng, size), 1);
        live.push_back(p);
        ++out.creates;
    };
    auto remove = [&] {
        std::size_t i = pick(live.size());
        fs.unlink(live[i], 1);
        live[i] = live.back();
        live.pop_back();
        ++out.deletes;
    };
    for (std::size_t i = 0; i < cfg.files; ++i)
        timed([&] {
            create();
            fs.commit();
            ++out.commits;
        });
    for (std::size_t t = 0; t < cfg.transactions; ++t) {
        timed([&] {
            if (!live.empty()) {
                InodeNumber ino = fs.lookup(live[pick(live.size())], 1);
                if (pick(2) == 0) {
                    fs.read(ino, 0, cfg.read_size, 1);
                    ++out.reads;
                } else {
                    std::uint64_t size = fs.stat(ino, 1).size;
                    fs.write(ino, size, random_bytes(rng, cfg.write_size), 1);
                    ++out.appends;
                }
            }
            if (pick(2) == 0 || live.empty()) create();
            else remove();
            fs.commit();
            ++out.commits;
        });
    }
    while (!live.empty()) remove();
    fs.commit();
    fs.vm().flush_all();
    d.env.drain();
    out.vm = fs.vm().counters();
    return out;
}

Report bench_report(const BenchConfig& cfg)
{
    Report r;
    r.title = std::string("bench ") + cfg.workload + " " + sign_mode_name(cfg.mode);
    r.note("mode", sign_mode_name(cfg.mode));
    r.note("threshold", std::to_string(cfg.threshold));
    if (cfg.workload == "postmark") {
        PostmarkResult p = run_postmark(cfg);
        r.counter("sign_calls", p.vm.sign_calls);
        r.counter("verify_calls", p.vm.verify_calls);
        r.counter("retransmits", p.vm.retransmits);
        r.counter("hotpath_crypto_calls", p.vm.hotpath_crypto_calls);
        r.counter("ops_total", p.vm.ops);
        r.counter("flushes", p.vm.flushes);
        r.counter("commits", p.commits);
        r.counter("creates", p.creates);
        r.counter("deletes", p.deletes);
        r.counter("reads", p.reads);
        r.counter("appends", p.appends);
        r.latency = p.histogram;
        if (cfg.mode == SignMode::Sync) r.check("sign-per-op", p.vm.sign_calls == p.vm.ops);
        if (cfg.mode == SignMode::NoSign) r.check("no-signatures", p.vm.sign_calls == 0);
        if (cfg.mode == SignMode::Async) {
            std::uint64_t bound = (p.vm.ops + cfg.threshold - 1) / cfg.threshold + p.vm.flushes;
            r.check("sign-amortized", p.vm.sign_calls <= bound,
                    std::to_string(p.vm.sign_calls) + " <= " + std::to_string(bound));
            r.check("hotpath-crypto-zero", p.vm.hotpath_crypto_calls == 0);
        }
        return r;
    }
    StoreBench b = run_store_bench(cfg);
    r.counter("sign_calls", b.vm.sign_calls);
    r.counter("verify_calls", b.vm.verify_calls);
    r.counter("retransmits", b.vm.retransmits);
    r.counter("hotpath_crypto_calls", b.vm.hotpath_crypto_calls);
    r.counter("ops_total", b.vm.ops);
    r.counter("completed_batches", b.completed_batches);
    r.counter("final_flush_signs", b.final_flush_signs);
    r.counter("spikes", b.spike_ops.size());
    r.counter("low_mode_max_ticks", b.low_max);
    r.counter("high_mode_min_ticks", b.high_min);
    r.latency = b.histogram;
    switch (cfg.mode) {
    case SignMode::Async: {
        std::uint64_t bound = (cfg.stores + cfg.threshold - 1) / cfg.threshold + b.final_flush_signs;
        r.check("sign-amortized", b.vm.sign_calls <= bound, std::to_string(b.vm.sign_calls) + " <= " + std::to_string(bound));
        r.check("hotpath-crypto-zero", b.vm.hotpath_crypto_calls == 0);
        r.check("one-spike-per-batch", b.spike_ops.size() == b.completed_batches,
                std::to_string(b.spike_ops.size()) + " spikes, " + std::to_string(b.completed_batches) + " batches");
        r.check("spikes-every-threshold", b.periodic || b.completed_batches == 0);
        r.check("bimodal", b.bimodal || b.completed_batches == 0,
                "low<=" + std::to_string(b.low_max) + " high>=" + std::to_string(b.high_min));
        break;
    }
    case SignMode::Sync:
        r.check("sign-per-op", b.vm.sign_calls == cfg.stores, std::to_string(b.vm.sign_calls));
        break;
    case SignMode::NoSign:
        r.check("no-signatures", b.vm.sign_calls == 0, std::to_string(b.vm.sign_calls));
        break;
    }
    return r;
}

ChurnResult churn(Deployment& d, FsId node, PrincipalId uid, std::size_t blocks, std::size_t ops, std::uint64_t seed)
{
    VolumeManager& vm = d.fs(node).vm();
    const InodeNumber ino{node, static_cast<std::uint16_t>(uid), kScratchSeq};
    FgrpId fgrp = 0;
    for (const auto& g : d.config().groups)
        if (g.writers.count(uid) && !fgrp) fgrp = g.id;
    std::mt19937_64 rng(seed);
    std::vector<Bytes> pool;
    for (std::size_t j = 0; j < blocks; ++j) pool.push_back(random_bytes(rng, kBlockSize));
    std::vector<std::optional<Digest>> name(blocks);
    std::vector<std::size_t> live(blocks, 0);
    ChurnResult out;
    for (std::size_t i = 0; i < ops; ++i) {
        std::size_t j = rng() % blocks;
        if (live[j] > 0 && (rng() & 1)) {
            vm.vm_free(*name[j], ino, uid);
            --live[j];
        } else {
            name[j] = vm.vm_write(pool[j], ino, uid, fgrp);
            ++live[j];
        }
        ++out.ops;
        out.evidence_peak = std::max(out.evidence_peak, d.lhash->evidence_size());
    }
    vm.flush_all();
    d.env.drain();
    PruneResult pr = d.lhash->lhash_prune_round();
    out.agreed = pr.agreed;
    out.evidence_pre = pr.evidence_before;
    out.evidence_post = pr.evidence_after;
    out.leaves = d.lhash->agreed_leaves().size();
    return out;
}

Report prune_report(const std::vector<std::size_t>& op_counts, std::size_t blocks, std::uint64_t seed)
{
    Report r;
    r.title = "prune-report";
    for (std::size_t ops : op_counts) {
        DeploymentConfig dc;
        dc.nodes = {NodeSpec{1, {1}}};
        dc.groups = {GroupSpec{1, {1}, {1}}};
        dc.vm.threshold = 100;
        dc.vm.timeout = std::uint64_t{1} << 40;
        dc.server.pending_deadline = std::uint64_t{1} << 41;
        Deployment d(dc, seed);
        ChurnResult c = churn(d, 1, 1, blocks, ops, seed);
        // A second round with no churn in between leaves the evidence alone.
        PruneResult again = d.lhash->lhash_prune_round();
        std::string tag = "ops" + std::to_string(ops);
        r.counter(tag + ".ops_total", c.ops);
        r.counter(tag + ".vault_size_pre_prune", c.evidence_pre);
        r.counter(tag + ".vault_size_post_prune", c.evidence_post);
        r.counter(tag + ".blocks_live", c.leaves);
        r.check(tag + ".agreed", c.agreed);
        r.check(tag + ".bound", c.evidence_post <= blocks + 1,
                std::to_string(c.evidence_post) + " <= " + std::to_string(blocks) + " leaves + 1 root");
        r.check(tag + ".idempotent", again.agreed && again.evidence_after == again.evidence_before &&
                                         again.evidence_after == c.evidence_post);
    }
    return r;
}

AccountabilitySummary run_accountability(std::size_t count, std::uint64_t seed)
{
    AccountabilitySummary s;
    const int kinds = static_cast<int>(FaultKind::DelayMessage) + 1;
    for (std::size_t i = 0; i < count; ++i) {
        auto kind = static_cast<FaultKind>(i % kinds);
        std::uint64_t sseed = seed * 7919 + i;
        Scenario sc = random_fault_scenario(sseed, kind);
        ScenarioResult res = run_scenario(sc, sseed);
        ++s.scenarios;
        ++s.per_kind[fault_kind_name(kind)];
        s.injected += res.violations_injected;
        s.disputed += res.violations_disputed;
        bool bad = false;
        for (const auto& v : res.verdicts) {
            ++s.disputes;
            s.false_accusations += v.false_accusation;
            bool names_party = v.expected.rfind("StorageServer", 0) == 0 || v.expected.rfind("Fileserver", 0) == 0;
            if (v.in_window) {
                ++s.in_window;
                s.in_window_flagged += v.correct;
            } else if (names_party) {
                ++s.covered;
                s.covered_correct += v.correct;
            } else {
                s.other_wrong += !v.correct;
            }
            bad = bad || !v.correct || v.false_accusation;
        }
        if (!res.ok()) {
            ++s.invariant_failures;
            bad = true;
        }
        if (bad) s.failures.push_back(sc.name);
    }
    return s;
}

Report AccountabilitySummary::report() const
{
    Report r;
    r.title = "accountability";
    r.counter("scenarios", scenarios);
    r.counter("disputes", disputes);
    r.counter("false_accusations", false_accusations);
    r.counter("covered_violations", covered);
    r.counter("covered_correct", covered_correct);
    r.counter("in_window", in_window);
    r.counter("in_window_flagged", in_window_flagged);
    r.counter("other_wrong", other_wrong);
    r.counter("violations_injected", injected);
    r.counter("violations_disputed", disputed);
    for (const auto& [k, n] : per_kind) r.counter("kind." + k, n);
    r.check("no-false-accusations", false_accusations == 0);
    r.check("covered-all-blamed", covered_correct == covered,
            std::to_string(covered_correct) + "/" + std::to_string(covered));
    r.check("window-flagged", in_window_flagged == in_window,
            std::to_string(in_window_flagged) + "/" + std::to_string(in_window));
    r.check("other-verdicts", other_wrong == 0);
    r.counter("invariant_failures", invariant_failures);
    r.check("scenario-invariants", invariant_failures == 0, std::to_string(invariant_failures) + " scenarios failed");
    r.check("every-violation-disputed", disputed == injected,
            std::to_string(disputed) + "/" + std::to_string(injected));
    for (std::size_t i = 0; i < failures.size() && i < 20; ++i) r.note("failed", failures[i]);
    return r;
}

RefcountOracle run_refcount_oracle(std::size_t ops, std::uint64_t seed)
{
    DeploymentConfig dc = default_deployment();
    dc.vm.threshold = 64;
    dc.vm.timeout = std::uint64_t{1} << 40;
    dc.server.pending_deadline = std::uint64_t{1} << 41;
    Deployment d(dc, seed);
    d.format();
    std::mt19937_64 rng(seed);

    struct Target {
        InodeNumber ino;
        FgrpId fgrp;
        std::vector<PrincipalId> writers;
    };
    std::vector<Target> targets;
    // Two shared groups: 2 = {1,2}, 3 = {2,3}. Each member owns two inodes in each of its groups.
    const std::pair<FgrpId, std::vector<PrincipalId>> groups[] = {{2, {1, 2}}, {3, {2, 3}}};
    std::uint32_t seq = 0x40000000;
    for (const auto& [fg, members] : groups)
        for (PrincipalId owner : members)
            for (int k = 0; k < 2; ++k) {
                InodeNumber ino{d.node_of(owner), static_cast<std::uint16_t>(owner), seq++};
                d.lhash->fgrp_assign(ino, fg);
                targets.push_back(Target{ino, fg, members});
            }
    std::map<FgrpId, std::vector<Bytes>> pool;
    for (const auto& [fg, members] : groups)
        for (int j = 0; j < 24; ++j) pool[fg].push_back(random_bytes(rng, 1 + rng() % kBlockSize));

    std::map<Digest, std::map<InodeNumber, std::uint64_t>> refs;
    std::map<Digest, std::map<PrincipalId, std::int64_t>> per_uid, charged;
    std::map<std::pair<FgrpId, std::size_t>, Digest> names;
    RefcountOracle out;
    for (std::size_t i = 0; i < ops; ++i) {
        const Target& t = targets[rng() % targets.size()];
        PrincipalId writer = t.writers[rng() % t.writers.size()];
        std::size_t j = rng() % pool[t.fgrp].size();
        VolumeManager& vm = d.fs(d.node_of(writer)).vm();
        auto known = names.find({t.fgrp, j});
        bool can_free = known != names.end() && refs[known->second][t.ino] > 0;
        if (can_free && (rng() % 3 == 0)) {
            const Digest& blk = known->second;
            vm.vm_free(blk, t.ino, writer);
            if (--refs[blk][t.ino] == 0) refs[blk].erase(t.ino);
            --per_uid[blk][writer];
            --charged[blk][t.ino.owner_uid];
            ++out.frees;
        } else {
            Digest blk = vm.vm_write(pool[t.fgrp][j], t.ino, writer, t.fgrp);
            names[{t.fgrp, j}] = blk;
            ++refs[blk][t.ino];
            ++per_uid[blk][writer];
            ++charged[blk][t.ino.owner_uid];
            ++out.stores;
        }
        ++out.ops;
    }
    for (auto* vm : d.volume_managers()) vm->flush_all();
    d.env.drain();

    auto strip = [](auto m) {
        std::erase_if(m, [](const auto& p) { return p.second == 0; });
        return m;
    };
    for (const auto& [blk, r] : refs) {
        ++out.blocks_compared;
        auto it = d.ss.blocks().find(blk);
        std::map<InodeNumber, std::uint64_t> have;
        std::map<PrincipalId, std::int64_t> have_uid;
        if (it != d.ss.blocks().end()) have = strip(it->second.refs);
        have_uid = strip(d.ss.per_uid(blk));
        if (have != strip(r)) ++out.per_inode_mismatches;
        if (have_uid != strip(per_uid[blk])) ++out.per_uid_mismatches;
        const UidCounts* c = d.ss.refcnt_tree().counts(blk);
        UidCounts tree = c ? strip(*c) : UidCounts{};
        UidCounts want;
        for (const auto& [u, n] : strip(charged[blk])) want[u] = n;
        // The root directory blocks share owner 0 and stay out of the replay.
        if (tree != want) ++out.tree_mismatches;
    }
    out.roots_equal = d.ss.refcnt_tree().root() == d.lhash->refcnt_tree().root();
    return out;
}

IntegrityCheck run_integrity(std::size_t trials, std::uint64_t seed)
{
    BenchConfig bc;
    bc.threshold = 32;
    DeploymentConfig dc = single_node(bc);
    Deployment d(dc, seed);
    d.format();
    VolumeManager& vm = d.fs(1).vm();
    std::mt19937_64 rng(seed);
    const InodeNumber ino{1, 1, kScratchSeq};
    std::vector<Digest> blocks;
    for (int i = 0; i < 64; ++i) blocks.push_back(vm.vm_write(random_bytes(rng, 1 + rng() % kBlockSize), ino, 1, 1));
    vm.flush_all();
    d.env.drain();
    IntegrityCheck out;
    for (std::size_t i = 0; i < trials; ++i) {
        const Digest& blk = blocks[rng() % blocks.size()];
        std::size_t bits = d.ss.blocks().at(blk).data.size() * 8;
        d.ss.faults().corrupt_on_load[blk] = rng() % bits;
        std::uint64_t decrypts = vm.counters().decrypts;
        ++out.trials;
        try {
            vm.vm_read(blk, 1);
        } catch (const Error& e) {
            if (e.code() == Errc::IntegrityFailure) ++out.detected;
            else ++out.other_errors;
        }
        if (vm.counters().decrypts != decrypts) ++out.decrypted_when_corrupt;
        d.ss.faults().corrupt_on_load.erase(blk);
    }
    return out;
}

}  // namespace safius
