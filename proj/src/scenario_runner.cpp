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


#include <algorithm>
#include <sstream>

#include "safius/bench.hpp"
#include "safius/harness.hpp"

namespace safius {

const char* fault_kind_name(FaultKind k)
{
    switch (k) {
    case FaultKind::DropBlock: return "drop-block";
    case FaultKind::ReturnNotFound: return "not-found";
    case FaultKind::CorruptBytes: return "corrupt";
    case FaultKind::RefuseGrant: return "refuse-grant";
    case FaultKind::ForgeClaim: return "forge-claim";
    case FaultKind::ForgeCharge: return "forge-charge";
    case FaultKind::CrashActor: return "crash";
    case FaultKind::DelayMessage: return "delay";
    }
    return "?";
}

std::optional<FaultKind> parse_fault_kind(const std::string& s)
{
    for (int i = 0; i <= static_cast<int>(FaultKind::DelayMessage); ++i)
        if (s == fault_kind_name(static_cast<FaultKind>(i))) return static_cast<FaultKind>(i);
    return std::nullopt;
}

namespace {

struct Expect {
    Party guilty = Party::NoViolation;
    PrincipalId uid = 0;
    bool insufficient = false;
    bool loose = false;  // any verdict that names nobody is acceptable

    std::string str() const
    {
        if (loose) return "no accusation";
        return verdict_str(Verdict{guilty, uid, insufficient, {}});
    }
};

Expect blame_server() { return Expect{Party::StorageServer, 0, false, false}; }
Expect blame_client(PrincipalId u) { return Expect{Party::Fileserver, u, false, false}; }
Expect gap() { return Expect{Party::NoViolation, 0, true, false}; }
Expect clean() { return Expect{Party::NoViolation, 0, false, false}; }
Expect anything_but_blame() { return Expect{Party::NoViolation, 0, false, true}; }

bool byzantine(FaultKind k) { return k != FaultKind::CrashActor && k != FaultKind::DelayMessage; }

class Runner {
public:
    Runner(const Scenario& sc, std::uint64_t seed, const FaultPlan& extra)
        : sc_(sc), d_(sc.deploy, seed), rng_(seed * 0x9e3779b97f4a7c15ULL + 11)
    {
        faults_ = sc.faults.faults;
        faults_.insert(faults_.end(), extra.faults.begin(), extra.faults.end());
        std::stable_sort(faults_.begin(), faults_.end(), [](const Fault& a, const Fault& b) { return a.at < b.at; });
        for (const auto& f : faults_) {
            if (!byzantine(f.kind)) continue;
            byzantine_ = true;
            if (f.kind == FaultKind::ForgeClaim) faulty_uids_.insert(f.uid);
            else server_faulty_ = true;
        }
    }

    ScenarioResult run();

    struct State {
        std::map<InodeNumber, Idata> itbl;
        std::map<Digest, std::map<InodeNumber, std::uint64_t>> refs;
        friend bool operator==(const State&, const State&) = default;
    };
    // Prefix, quiesce, then the commit of interest with an optional armed
    // crash, then recovery and quiescence.
    State crash_run(std::optional<PointHit> arm, std::vector<PointHit>* record, State* pre, bool* roots_agree);
    Trace trace() const { return d_.env.trace_log(); }

private:
    State state() const { return State{d_.user_itbl(), d_.server_refs()}; }
    void note(const std::string& s) { d_.env.trace("harness", s); }
    void fire(const Fault& f);
    void exec(const WorkOp& op, std::size_t idx);
    std::string perform(const WorkOp& op);
    InodeNumber resolve(Fileserver& fs, const WorkOp& op, const std::string& path);
    Bytes data_of(const std::string& spec, bool consume);
    void scan_events();
    void dispute(const Dispute& dsp, Expect want);
    void reconcile();
    void prune();
    void recover_if_needed();
    void invariants();

    const Scenario& sc_;
    Deployment d_;
    std::mt19937_64 rng_;
    std::vector<Fault> faults_;
    ScenarioResult res_;
    Report& rep_ = res_.report;

    std::map<FsId, std::map<std::string, InodeNumber>> handles_;
    std::map<VolumeManager*, std::size_t> events_seen_;
    std::size_t script_failures_ = 0;
    std::size_t unexpected_errors_ = 0;
    std::size_t ops_total_ = 0;
    std::size_t churn_ops_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> vault_sizes_;

    bool byzantine_ = false;
    bool server_faulty_ = false;
    std::set<PrincipalId> faulty_uids_;
    std::map<Digest, std::size_t> lost_;  // block -> fault index
    std::set<Digest> corrupted_;
    std::set<std::pair<Digest, PrincipalId>> forged_;
    std::map<std::size_t, bool> fault_disputed_;
};

Bytes Runner::data_of(const std::string& spec, bool consume)
{
    if (spec.rfind("rand:", 0) == 0) {
        std::size_t n = std::stoul(spec.substr(5));
        Bytes b(n);
        if (consume)
            for (auto& x : b) x = static_cast<std::uint8_t>(rng_() & 0xff);
        return b;
    }
    if (spec.rfind("rep:", 0) == 0 && spec.size() > 6) {
        char c = spec[4];
        std::size_t n = std::stoul(spec.substr(6));
        return Bytes(n, static_cast<std::uint8_t>(c));
    }
    return to_bytes(spec);
}


void Runner::dispute(const Dispute& dsp, Expect want)
{
    Evidence ev = collect_evidence(*d_.lhash, d_.ss);
    Verdict v = safius::resolve(dsp, ev, d_.keys);
    VerdictRecord r;
    r.kind = dispute_kind_name(dsp.kind);
    r.blknum = dsp.blknum.short_hex();
    r.uid = dsp.uid;
    r.verdict = verdict_str(v);
    r.expected = want.str();
    r.rationale = v.rationale;
    r.in_window = want.insufficient;
    if (want.loose) r.correct = v.guilty == Party::NoViolation;
    else
        r.correct = v.guilty == want.guilty && (v.guilty != Party::Fileserver || v.uid == want.uid) &&
                    v.insufficient_evidence == want.insufficient;
    r.false_accusation = (v.guilty == Party::StorageServer && !server_faulty_) ||
                         (v.guilty == Party::Fileserver && !faulty_uids_.count(v.uid));
    note("dispute " + r.kind + " blk=" + r.blknum + " uid=" + std::to_string(r.uid) + " verdict=" + r.verdict +
         " expected=" + r.expected);
    res_.verdicts.push_back(r);
}

void Runner::scan_events()
{
    for (auto* vm : d_.volume_managers()) {
        auto& seen = events_seen_[vm];
        const auto& evs = vm->events();
        for (; seen < evs.size(); ++seen) {
            const VmEvent& e = evs[seen];
            Dispute dsp;
            dsp.blknum = e.blknum;
            dsp.ino = e.ino;
            dsp.uid = e.uid;
            dsp.context = vm->actor() + ": " + e.reason;
            Expect want = anything_but_blame();
            std::optional<std::size_t> fault;
            switch (e.kind) {
            case VmEvent::Kind::LoadMiss: {
                dsp.kind = DisputeKind::LoadMiss;
                if (auto it = lost_.find(e.blknum); it != lost_.end()) {
                    fault = it->second;
                    std::int64_t live = 0;
                    if (const UidCounts* c = d_.lhash->refcnt_tree().counts(e.blknum))
                        for (const auto& [u, n] : *c) live += n;
                    want = live > 0 ? blame_server() : gap();
                }
                break;
            }
            case VmEvent::Kind::BadBlockBytes:
                dsp.kind = DisputeKind::BadBlockBytes;
                dsp.returned_bytes = e.returned_bytes;
                want = blame_server();
                for (std::size_t i = 0; i < faults_.size(); ++i)
                    if (faults_[i].kind == FaultKind::CorruptBytes && corrupted_.count(e.blknum)) fault = i;
                break;
            case VmEvent::Kind::GrantRefused:
                dsp.kind = DisputeKind::GrantRefusal;
                want = gap();
                for (std::size_t i = 0; i < faults_.size(); ++i)
                    if (faults_[i].kind == FaultKind::RefuseGrant && faults_[i].uid == e.uid) fault = i;
                break;
            default:
                continue;
            }
            if (fault) {
                if (fault_disputed_[*fault]) continue;  // one dispute per injected fault
                fault_disputed_[*fault] = true;
            }
            dispute(dsp, want);
        }
    }
}

void Runner::reconcile()
{
    std::set<PrincipalId> uids;
    for (const auto& n : d_.config().nodes) uids.insert(n.uids.begin(), n.uids.end());
    for (const auto& [blk, counts] : d_.ss.refcnt_tree().snapshot()) {
        for (const auto& [u, n] : counts) {
            if (!uids.count(u) || faulty_uids_.count(u)) continue;
            if (n <= d_.lhash->refcnt_tree().count(blk, u)) continue;
            Dispute dsp;
            dsp.kind = DisputeKind::UnsolicitedStore;
            dsp.blknum = blk;
            dsp.uid = u;
            dsp.context = "charged beyond the l-hash mirror";
            bool forged = forged_.count({blk, u}) != 0;
            if (forged)
                for (std::size_t i = 0; i < faults_.size(); ++i)
                    if (faults_[i].kind == FaultKind::ForgeCharge && faults_[i].uid == u) fault_disputed_[i] = true;
            dispute(dsp, forged ? blame_server() : anything_but_blame());
        }
    }
}

void Runner::prune()
{
    PruneResult pr = d_.lhash->lhash_prune_round();
    vault_sizes_.emplace_back(pr.evidence_before, pr.evidence_after);
    if (!pr.mismatch) return;
    Dispute dsp;
    dsp.kind = DisputeKind::RefcntMismatch;
    dsp.blknum = pr.mismatch->blknum;
    dsp.divergence = pr.mismatch->divergence;
    dsp.context = "prune round";
    bool forged = false;
    for (const auto& [b, u] : forged_) forged = forged || b == dsp.blknum;
    dispute(dsp, forged ? blame_server() : anything_but_blame());
}

void Runner::fire(const Fault& f)
{
    std::size_t idx = static_cast<std::size_t>(&f - faults_.data());
    note(std::string("fault ") + fault_kind_name(f.kind));
    auto target = [&]() -> std::optional<Digest> {
        auto b = d_.peek_block(f.path, f.block);
        if (!b) note("fault target " + f.path + " has no block " + std::to_string(f.block));
        return b;
    };
    switch (f.kind) {
    case FaultKind::DropBlock:
    case FaultKind::ReturnNotFound:
    case FaultKind::CorruptBytes: {
        auto b = target();
        if (!b) return;
        ++res_.violations_injected;
        fault_disputed_[idx] = false;
        if (f.kind == FaultKind::DropBlock) d_.ss.drop_block(*b);
        if (f.kind == FaultKind::ReturnNotFound) d_.ss.faults().report_not_found.insert(*b);
        if (f.kind == FaultKind::CorruptBytes) {
            d_.ss.faults().corrupt_on_load[*b] = f.bit;
            corrupted_.insert(*b);
        } else {
            lost_.emplace(*b, idx);
        }
        return;
    }
    case FaultKind::RefuseGrant:
        ++res_.violations_injected;
        fault_disputed_[idx] = false;
        d_.ss.faults().refuse_grant_for.insert(f.uid);
        return;
    case FaultKind::ForgeClaim: {
        auto b = target();
        if (!b) return;
        ++res_.violations_injected;
        fault_disputed_[idx] = true;
        Dispute dsp;
        dsp.kind = DisputeKind::UnsolicitedStore;
        dsp.blknum = *b;
        dsp.uid = f.uid;
        dsp.context = "uid denies storing " + f.path;
        Expect want = clean();
        if (d_.ss.refcnt_tree().count(*b, f.uid) > 0) {
            want = blame_client(f.uid);
        } else {
            for (const auto& p : d_.ss.evidence().pending)
                if (p.entry.blknum == *b) want = gap();
        }
        dispute(dsp, want);
        return;
    }
    case FaultKind::ForgeCharge: {
        Bytes junk(32);
        for (auto& x : junk) x = static_cast<std::uint8_t>(rng_() & 0xff);
        Digest b = digest(junk);
        ++res_.violations_injected;
        fault_disputed_[idx] = false;
        d_.ss.forge_charge(b, f.uid);
        forged_.insert({b, f.uid});
        return;
    }
    case FaultKind::CrashActor:
        d_.env.arm_crash(PointHit{f.actor, f.point, f.occurrence});
        return;
    case FaultKind::DelayMessage:
        d_.env.delay_next(f.from, f.to, f.message, f.ticks);
        return;
    }
}

InodeNumber Runner::resolve(Fileserver& fs, const WorkOp& op, const std::string& path)
{
    auto& h = handles_[op.node];
    if (auto it = h.find(path); it != h.end()) return it->second;
    return fs.lookup(path, op.uid);
}

std::string Runner::perform(const WorkOp& op)
{
    const auto& a = op.args;
    auto arg = [&](std::size_t i) -> const std::string& {
        if (i >= a.size()) raise(Errc::InvalidArgument, op.verb + " needs more arguments");
        return a[i];
    };
    auto num = [&](std::size_t i) { return std::stoull(arg(i)); };
    if (op.node == 0) {
        if (op.verb == "tick") {
            d_.env.advance(num(0));
            d_.timers();
        } else if (op.verb == "flush") {
            for (auto* vm : d_.volume_managers()) {
                try {
                    vm->flush_all();
                } catch (const Error&) {
                }
            }
        } else if (op.verb == "prune") {
            prune();
        } else if (op.verb == "checkpoint") {
            d_.lhash->checkpoint();
        } else if (op.verb == "quiesce") {
            d_.quiesce();
        } else if (op.verb == "audit") {
            reconcile();
        } else if (op.verb == "crash") {
            d_.env.set_down(arg(0), true);
            handles_.erase(arg(0).rfind("fs", 0) == 0 ? static_cast<FsId>(std::stoul(arg(0).substr(2))) : 0);
            d_.recover();
        } else if (op.verb == "churn") {
            ChurnResult c = churn(d_, static_cast<FsId>(num(0)), static_cast<PrincipalId>(num(1)), num(2), num(3),
                                  d_.env.rng()());
            vault_sizes_.emplace_back(c.evidence_pre, c.evidence_post);
            churn_ops_ += c.ops;
            rep_.check("prune-bound", c.agreed && c.evidence_post <= c.leaves + 1,
                       std::to_string(c.evidence_post) + " <= " + std::to_string(c.leaves) + " leaves + 1 root");
            return std::to_string(c.evidence_post);
        } else if (op.verb == "interest") {
        } else {
            raise(Errc::InvalidArgument, "unknown harness op " + op.verb);
        }
        return "ok";
    }
    Fileserver& fs = d_.fs(op.node);
    const std::string& v = op.verb;
    if (v == "create") return fs.create(arg(0), op.uid, static_cast<FgrpId>(num(1))).str();
    if (v == "mkdir") return fs.mkdir(arg(0), op.uid, static_cast<FgrpId>(num(1))).str();
    if (v == "write") {
        Bytes data = data_of(arg(2), true);
        fs.write(resolve(fs, op, arg(0)), num(1), data, op.uid);
        return std::to_string(data.size());
    }
    if (v == "read") return to_string(fs.read(resolve(fs, op, arg(0)), num(1), num(2), op.uid));
    if (v == "unlink") {
        fs.unlink(arg(0), op.uid);
        return "ok";
    }
    if (v == "open") {
        InodeNumber ino = fs.open(arg(0), op.uid);
        handles_[op.node][arg(0)] = ino;
        return ino.str();
    }
    if (v == "close") {
        auto& h = handles_[op.node];
        auto it = h.find(arg(0));
        if (it == h.end()) raise(Errc::InvalidArgument, "no open handle for " + arg(0));
        fs.close(it->second);
        h.erase(it);
        return "ok";
    }
    if (v == "readdir") {
        std::string out;
        for (const auto& e : fs.readdir(arg(0), op.uid)) out += (out.empty() ? "" : ",") + e.name;
        return out;
    }
    if (v == "stat") return std::to_string(fs.stat(resolve(fs, op, arg(0)), op.uid).size);
    if (v == "commit") {
        auto t = fs.commit();
        return t ? std::to_string(*t) : "none";
    }
    if (v == "abort") {
        fs.abort();
        return "ok";
    }
    if (v == "mount") return std::to_string(fs.mount().size());
    if (v == "flush") {
        fs.vm().flush_all();
        return "ok";
    }
    if (v == "timer") {
        fs.on_timer();
        return "ok";
    }
    if (v == "restart") {
        d_.env.set_down(fs.actor(), true);
        handles_.erase(op.node);
        d_.recover();
        return "ok";
    }
    raise(Errc::InvalidArgument, "unknown op " + v);
}

void Runner::exec(const WorkOp& op, std::size_t idx)
{
    std::string desc = "op " + std::to_string(idx) + " " +
                       (op.node ? "fs" + std::to_string(op.node) + " uid=" + std::to_string(op.uid) + " " : "") + op.verb;
    for (const auto& x : op.args) desc += " " + (x.size() > 24 ? x.substr(0, 24) + "..." : x);
    note(desc);
    std::size_t at = d_.env.trace_log().lines().size();
    ++ops_total_;
    std::string result;
    std::optional<Errc> err;
    bool crashed = false;
    try {
        result = perform(op);
    } catch (const Error& e) {
        err = e.code();
        result = e.what();
    } catch (const CrashSignal& c) {
        d_.env.set_down(c.actor, true);
        crashed = true;
        result = "crash " + c.actor + " at " + c.point;
    }
    note("result " + (result.size() > 64 ? result.substr(0, 64) + "..." : result));
    std::string line = "line " + std::to_string(op.line) + " " + op.verb;
    if (op.expect_error) {
        if (err != op.expect_error) {
            ++script_failures_;
            rep_.check("script", false,
                       line + ": expected " + std::string(errc_name(*op.expect_error)) + ", got " + result, at);
        }
    } else if (err || crashed) {
        if (faults_.empty()) {
            ++script_failures_;
            rep_.check("script", false, line + ": unexpected " + result, at);
        } else {
            ++unexpected_errors_;
        }
    } else if (op.expect_value) {
        std::string want = to_string(data_of(*op.expect_value, false));
        if (result != want) {
            ++script_failures_;
            rep_.check("script", false,
                       line + ": expected \"" + want.substr(0, 40) + "\", got \"" + result.substr(0, 40) + "\"", at);
        }
    }
    scan_events();
    recover_if_needed();
}

void Runner::recover_if_needed()
{
    bool any = d_.env.is_down(d_.lhash->name());
    for (const auto& [id, f] : d_.nodes) any = any || d_.env.is_down(f->actor());
    if (!any) return;
    for (const auto& [id, f] : d_.nodes)
        if (d_.env.is_down(f->actor())) handles_.erase(id);
    try {
        d_.recover();
    } catch (const CrashSignal& c) {
        d_.env.set_down(c.actor, true);
    } catch (const Error& e) {
        note(std::string("recovery error ") + e.what());
    }
    scan_events();
}

void Runner::invariants()
{
    rep_.check("script", script_failures_ == 0, std::to_string(script_failures_) + " failed expectations");
    if (!byzantine_) {
        bool quiet = d_.env.in_flight() == 0 && d_.ss.pending_total() == 0;
        std::size_t live = 0;
        for (auto* vm : d_.volume_managers()) live += vm->live_entries();
        rep_.check("quiescence", quiet && live == 0,
                   "in_flight=" + std::to_string(d_.env.in_flight()) + " pending=" + std::to_string(d_.ss.pending_total()) +
                       " live_log=" + std::to_string(live));
        rep_.check("refcnt-roots-agree", d_.ss.refcnt_tree().root() == d_.lhash->refcnt_tree().root(),
                   "ss=" + d_.ss.refcnt_tree().root().short_hex() + " lhash=" + d_.lhash->refcnt_tree().root().short_hex());
        auto want = d_.expected_refs();
        auto have = d_.server_refs();
        std::size_t dangling = 0, leaked = 0;
        for (const auto& [b, refs] : want)
            if (!have.count(b) || have.at(b) != refs) ++dangling;
        for (const auto& [b, refs] : have)
            if (!want.count(b)) ++leaked;
        rep_.check("refs-match-itbl", dangling == 0 && leaked == 0,
                   "mismatched=" + std::to_string(dangling) + " leaked=" + std::to_string(leaked));
    }
    std::size_t false_acc = 0, wrong = 0, gaps = 0;
    for (const auto& v : res_.verdicts) {
        false_acc += v.false_accusation;
        wrong += !v.correct;
        gaps += v.in_window;
    }
    rep_.check("audit-soundness", false_acc == 0, std::to_string(false_acc) + " false accusations");
    rep_.check("audit-verdicts", wrong == 0,
               std::to_string(res_.verdicts.size() - wrong) + "/" + std::to_string(res_.verdicts.size()) + " as expected, " +
                   std::to_string(gaps) + " in the unsigned window");
    std::size_t disputed = 0;
    for (const auto& [i, yes] : fault_disputed_) disputed += yes;
    res_.violations_disputed = disputed;
    if (res_.violations_injected)
        rep_.check("faults-disputed", disputed == res_.violations_injected,
                   std::to_string(disputed) + "/" + std::to_string(res_.violations_injected));
}

ScenarioResult Runner::run()
{
    rep_.title = sc_.name;
    d_.format();
    std::size_t next = 0;
    for (std::size_t i = 0; i <= sc_.ops.size(); ++i) {
        while (next < faults_.size() && faults_[next].at <= i) fire(faults_[next++]);
        if (i == sc_.ops.size()) break;
        exec(sc_.ops[i], i);
    }
    if (sc_.quiesce_at_end) {
        note("quiesce");
        try {
            d_.quiesce();
        } catch (const CrashSignal& c) {
            d_.env.set_down(c.actor, true);
            d_.quiesce();
        }
        scan_events();
        reconcile();
    }
    invariants();

    VmCounters fs_total;
    std::uint64_t verify = d_.ss.stats().verify_calls + d_.lhash->stats().verify_calls;
    for (auto& [id, f] : d_.nodes) {
        const auto& c = f->vm().counters();
        fs_total.sign_calls += c.sign_calls;
        fs_total.hotpath_crypto_calls += c.hotpath_crypto_calls;
        fs_total.retransmits += c.retransmits;
        fs_total.ops += c.ops;
        verify += c.verify_calls;
    }
    std::size_t live = 0;
    for (const auto& [b, s] : d_.ss.blocks()) live += s.live();
    rep_.counter("sign_calls", fs_total.sign_calls);
    rep_.counter("verify_calls", verify);
    rep_.counter("retransmits", fs_total.retransmits);
    rep_.counter("vault_size_pre_prune", vault_sizes_.empty() ? d_.lhash->evidence_size() : vault_sizes_.back().first);
    rep_.counter("vault_size_post_prune", vault_sizes_.empty() ? d_.lhash->evidence_size() : vault_sizes_.back().second);
    rep_.counter("blocks_live", live);
    rep_.counter("ops_total", fs_total.ops);
    rep_.counter("hotpath_crypto_calls", fs_total.hotpath_crypto_calls);
    rep_.counter("workload_ops", ops_total_);
    rep_.counter("churn_ops", churn_ops_);
    rep_.counter("server_grants", d_.ss.stats().grants);
    rep_.counter("server_rejects", d_.ss.stats().rejects);
    rep_.counter("lhash_commits", d_.lhash->stats().commits);
    rep_.counter("tolerated_errors", unexpected_errors_);
    rep_.counter("trace_lines", d_.env.trace_log().lines().size());
    rep_.counter("final_tick", d_.env.now());
    rep_.verdicts = res_.verdicts;
    res_.trace = d_.env.trace_log();
    return std::move(res_);
}

Runner::State Runner::crash_run(std::optional<PointHit> arm, std::vector<PointHit>* record, State* pre, bool* roots_agree)
{
    d_.format();
    const std::size_t k = sc_.interest.value_or(sc_.ops.size());
    for (std::size_t i = 0; i < k; ++i) exec(sc_.ops[i], i);
    d_.quiesce();
    if (pre) *pre = state();
    note("interest");
    if (record) d_.env.start_recording();
    if (arm) d_.env.arm_crash(*arm);
    for (std::size_t i = k; i < sc_.ops.size(); ++i) exec(sc_.ops[i], i);
    if (record) *record = d_.env.stop_recording();
    d_.env.disarm();
    recover_if_needed();
    d_.quiesce();
    if (roots_agree) *roots_agree = d_.ss.refcnt_tree().root() == d_.lhash->refcnt_tree().root();
    return state();
}

}  // namespace

bool CrashSuite::all_consistent() const
{
    for (const auto& c : cases)
        if (c.outcome != "pre" && c.outcome != "post") return false;
    return true;
}

CrashSuite enumerate_crash_points(const Scenario& sc, std::uint64_t seed)
{
    CrashSuite suite;
    if (!sc.interest || *sc.interest >= sc.ops.size()) return suite;
    Runner::State pre, post;
    std::vector<PointHit> hits;
    {
        Runner r(sc, seed, {});
        post = r.crash_run(std::nullopt, &hits, &pre, nullptr);
    }
    std::set<std::pair<std::string, std::string>> names;
    for (const auto& h : hits) names.insert({h.actor, h.point});
    suite.distinct_points = names.size();
    for (const auto& h : hits) {
        Runner r(sc, seed, {});
        bool agree = false;
        Runner::State got = r.crash_run(h, nullptr, nullptr, &agree);
        CrashCase c;
        c.hit = h;
        if (!agree) c.outcome = "neither";
        else if (got == post) c.outcome = "post";
        else if (got == pre) c.outcome = "pre";
        else c.outcome = "neither";
        std::size_t itbl_diff = 0;
        for (const auto& [ino, dd] : got.itbl)
            if (!post.itbl.count(ino) || !(post.itbl.at(ino) == dd)) ++itbl_diff;
        c.detail = "itbl=" + std::to_string(got.itbl.size()) + " differs_from_post=" + std::to_string(itbl_diff) +
                   " refs=" + std::to_string(got.refs.size()) + (agree ? "" : " roots-disagree");
        c.trace = r.trace();
        suite.cases.push_back(std::move(c));
    }
    return suite;
}

namespace {

struct Gen {
    std::mt19937_64 rng;
    std::uint64_t pick(std::uint64_t n) { return n ? rng() % n : 0; }
    bool chance(unsigned pct) { return pick(100) < pct; }
};

WorkOp fs_op(FsId node, PrincipalId uid, std::string verb, std::vector<std::string> args)
{
    WorkOp op;
    op.node = node;
    op.uid = uid;
    op.verb = std::move(verb);
    op.args = std::move(args);
    return op;
}

WorkOp do_op(std::string verb, std::vector<std::string> args = {})
{
    WorkOp op;
    op.verb = std::move(verb);
    op.args = std::move(args);
    return op;
}

}  // namespace

Scenario random_fault_scenario(std::uint64_t seed, FaultKind kind)
{
    Gen g{std::mt19937_64(seed * 1000003 + static_cast<std::uint64_t>(kind))};
    Scenario sc;
    sc.name = std::string("random-") + fault_kind_name(kind) + "-" + std::to_string(seed);
    sc.seed = seed;
    sc.deploy.vm.threshold = std::size_t{4} << g.pick(3);
    sc.deploy.vm.timeout = 1000;
    sc.deploy.server.pending_deadline = 4000;
    const PrincipalId uids[] = {1, 2, 3};
    auto node_of = [](PrincipalId u) -> FsId { return u == 2 ? 2 : 1; };
    auto group_for = [&](PrincipalId u) -> FgrpId {
        std::vector<FgrpId> gs{1};
        if (u == 1 || u == 2) gs.push_back(2);
        if (u == 2 || u == 3) gs.push_back(3);
        return gs[g.pick(gs.size())];
    };
    auto readers_of = [](FgrpId f) -> std::vector<PrincipalId> {
        if (f == 2) return {1, 2};
        if (f == 3) return {2, 3};
        return {1, 2, 3};
    };
    struct File {
        std::string path;
        PrincipalId owner;
        FgrpId fgrp;
    };
    std::vector<File> files;
    const std::size_t n = 3 + g.pick(3);
    for (std::size_t j = 0; j < n; ++j) {
        PrincipalId u = uids[g.pick(3)];
        File f{"/f" + std::to_string(j), u, group_for(u)};
        files.push_back(f);
        FsId node = node_of(u);
        sc.ops.push_back(fs_op(node, u, "create", {f.path, std::to_string(f.fgrp)}));
        sc.ops.push_back(fs_op(node, u, "write", {f.path, "0", "rand:" + std::to_string(100 + g.pick(9000))}));
        sc.ops.push_back(fs_op(node, u, "commit", {}));
        if (g.chance(40)) sc.ops.push_back(do_op("flush"));
        if (g.chance(20)) sc.ops.push_back(do_op("tick", {std::to_string(200 + g.pick(1500))}));
    }
    bool covered = g.chance(60);
    if (covered) {
        sc.ops.push_back(do_op("flush"));
        if (g.chance(40)) sc.ops.push_back(do_op("prune"));
    }
    const File& t = files[g.pick(files.size())];
    Fault f;
    f.kind = kind;
    f.at = sc.ops.size();
    f.path = t.path;
    PrincipalId reader = readers_of(t.fgrp)[g.pick(readers_of(t.fgrp).size())];
    bool read_after = false;
    switch (kind) {
    case FaultKind::DropBlock:
    case FaultKind::ReturnNotFound:
        read_after = true;
        break;
    case FaultKind::CorruptBytes:
        f.bit = g.pick(8 * 4096);
        read_after = true;
        break;
    case FaultKind::RefuseGrant:
        f.uid = uids[g.pick(3)];
        break;
    case FaultKind::ForgeClaim:
        f.uid = t.owner;
        break;
    case FaultKind::ForgeCharge:
        f.uid = uids[g.pick(3)];
        break;
    case FaultKind::CrashActor: {
        static const char* const fs_points[] = {"fs.commit.begin", "fs.commit.logged", "fs.commit.acked", "fs.commit.done",
                                                "vm.write.logged", "vm.write.sent",    "vm.flush.begin",  "vm.flush.sealed",
                                                "vm.flush.granted", "vm.flush.verified", "vm.flush.persisted",
                                                "vm.flush.released"};
        static const char* const lhash_points[] = {"lhash.sid.begin", "lhash.sid.logged", "lhash.sid.committed",
                                                   "lhash.sid.applied"};
        if (g.chance(70)) {
            f.actor = "fs" + std::to_string(1 + g.pick(2));
            f.point = fs_points[g.pick(std::size(fs_points))];
        } else {
            f.actor = "lhash";
            f.point = lhash_points[g.pick(std::size(lhash_points))];
        }
        f.occurrence = 1 + g.pick(2);
        break;
    }
    case FaultKind::DelayMessage:
        if (g.chance(70)) {
            f.from = "fs" + std::to_string(1 + g.pick(2));
            f.to = "ss";
            f.message = g.chance(80) ? "store" : "free";
        } else {
            f.from = "lhash";
            f.to = "fs" + std::to_string(1 + g.pick(2));
            f.message = "revoke";
        }
        f.ticks = 300 + g.pick(3000);
        break;
    }
    sc.faults.faults.push_back(f);
    if (read_after) sc.ops.push_back(fs_op(node_of(reader), reader, "read", {t.path, "0", "16"}));
    // More traffic after the fault, including the refused user if any.
    std::vector<PrincipalId> writers{uids[g.pick(3)]};
    if (kind == FaultKind::RefuseGrant) writers.push_back(f.uid);
    std::size_t extra = 0;
    for (PrincipalId u : writers) {
        std::string p = "/g" + std::to_string(extra++);
        sc.ops.push_back(fs_op(node_of(u), u, "create", {p, "1"}));
        sc.ops.push_back(fs_op(node_of(u), u, "write", {p, "0", "rand:" + std::to_string(100 + g.pick(6000))}));
        sc.ops.push_back(fs_op(node_of(u), u, "commit", {}));
    }
    if (g.chance(50)) {
        const File& w = files[g.pick(files.size())];
        sc.ops.push_back(fs_op(node_of(w.owner), w.owner, "write", {w.path, "0", "rand:" + std::to_string(50 + g.pick(3000))}));
        sc.ops.push_back(fs_op(node_of(w.owner), w.owner, "commit", {}));
    }
    sc.ops.push_back(do_op("flush"));
    if (kind == FaultKind::ForgeCharge || g.chance(30)) sc.ops.push_back(do_op("prune"));
    return sc;
}

ScenarioResult run_scenario(const Scenario& sc, std::uint64_t seed, const FaultPlan& extra)
{
    Runner r(sc, seed, extra);
    return r.run();
}

}  // namespace safius
