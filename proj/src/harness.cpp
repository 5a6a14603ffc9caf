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


#include "safius/harness.hpp"

#include <algorithm>
#include <sstream>

namespace safius {

DeploymentConfig default_deployment()
{
    DeploymentConfig c;
    c.nodes = {NodeSpec{1, {1, 3}}, NodeSpec{2, {2}}};
    c.groups = {GroupSpec{1, {1, 2, 3}, {1, 2, 3}}, GroupSpec{2, {1, 2}, {1, 2}}, GroupSpec{3, {2, 3}, {2, 3}}};
    c.root_fgrp = 1;
    c.admin = 1;
    return c;
}

namespace {

KeyRegistry make_keys(const DeploymentConfig& cfg)
{
    KeyRegistry k;
    std::set<PrincipalId> uids;
    for (const auto& n : cfg.nodes) uids.insert(n.uids.begin(), n.uids.end());
    for (PrincipalId u : uids) k.generate(u, cfg.key_seed * 1000 + u);
    k.generate(kStorageServerPrincipal, cfg.key_seed * 1000 + 901);
    k.generate(kLhashPrincipal, cfg.key_seed * 1000 + 902);
    return k;
}

std::vector<std::string> split(const std::string& path)
{
    std::vector<std::string> out;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/'))
        if (!part.empty()) out.push_back(part);
    return out;
}

}  // namespace

Deployment::Deployment(const DeploymentConfig& cfg, std::uint64_t seed)
    : env(cfg.costs, seed), keys(make_keys(cfg)), ss(env, keys, cfg.server), cfg_(cfg)
{
    FgrpKeyring system;
    system.add(FgrpKey::derive(0, cfg.key_seed));
    for (const auto& g : cfg.groups) all_keys.add(FgrpKey::derive(g.id, cfg.key_seed));
    lhash = std::make_unique<LhashServer>(env, keys, ss, lhash_disk, system, cfg.lhash, seed ^ 0x1a5);
    ss.attach_directory(lhash.get(), lhash->name());
    for (const auto& n : cfg.nodes) {
        FgrpKeyring ring;
        for (const auto& g : cfg.groups) {
            bool member = false;
            for (PrincipalId u : n.uids) member = member || g.writers.count(u) || g.readers.count(u);
            if (member) ring.add(all_keys.at(g.id));
        }
        FsConfig fc;
        fc.node_id = n.id;
        fc.uids = n.uids;
        fc.lock_drop_interval = cfg.lock_drop_interval;
        fc.vm = cfg.vm;
        auto& disk = disks[n.id];
        nodes[n.id] = std::make_unique<Fileserver>(env, fc, keys, ring, ss, *lhash, disk, seed * 31 + n.id);
    }
}

Deployment::~Deployment() = default;

void Deployment::format()
{
    for (const auto& g : cfg_.groups) lhash->fgrp_define(g.id, g.writers, g.readers);
    lhash->fgrp_assign(kRootIno, cfg_.root_fgrp);
    for (auto& [id, f] : nodes) f->mount();
    fs(node_of(cfg_.admin)).mkfs(cfg_.admin);
}

Fileserver& Deployment::fs(FsId id)
{
    auto it = nodes.find(id);
    if (it == nodes.end()) raise(Errc::InvalidArgument, "no node " + std::to_string(id));
    return *it->second;
}

std::vector<FsId> Deployment::node_ids() const
{
    std::vector<FsId> out;
    for (const auto& [id, f] : nodes) out.push_back(id);
    return out;
}

FsId Deployment::node_of(PrincipalId uid) const
{
    for (const auto& n : cfg_.nodes)
        if (n.uids.count(uid)) return n.id;
    raise(Errc::InvalidArgument, "uid " + std::to_string(uid) + " is on no node");
}

std::vector<std::string> Deployment::recover()
{
    std::vector<std::string> out;
    env.disarm();
    if (env.is_down(lhash->name())) {
        lhash->restart();
        out.push_back(lhash->name());
    }
    for (auto& [id, f] : nodes) {
        if (!env.is_down(f->actor())) continue;
        f->restart();
        f->mount();
        out.push_back(f->actor());
    }
    for (auto& [id, f] : nodes) {
        if (!f->in_doubt()) continue;
        try {
            f->resolve_in_doubt();
        } catch (const Error&) {
        }
    }
    return out;
}

void Deployment::timers()
{
    for (auto& [id, f] : nodes) {
        if (env.is_down(f->actor())) continue;
        try {
            f->on_timer();
        } catch (const Error&) {
        }
    }
    if (!env.is_down(lhash->name())) {
        lhash->vm().on_timer();
        lhash->tick();
    }
    ss.tick();
    env.pump();
}

std::vector<VolumeManager*> Deployment::volume_managers()
{
    std::vector<VolumeManager*> out;
    for (auto& [id, f] : nodes) out.push_back(&f->vm());
    out.push_back(&lhash->vm());
    return out;
}

void Deployment::quiesce(int rounds)
{
    for (int i = 0; i < rounds; ++i) {
        recover();
        env.drain();
        for (auto& [id, f] : nodes) {
            try {
                if (f->in_doubt()) f->resolve_in_doubt();
                f->vm().flush_all();
            } catch (const Error&) {
            }
        }
        try {
            lhash->vm().flush_all();
        } catch (const Error&) {
        }
        env.drain();
        bool idle = env.in_flight() == 0;
        for (auto* vm : volume_managers()) idle = idle && vm->live_entries() == 0;
        for (auto& [id, f] : nodes) idle = idle && !f->in_doubt() && !env.is_down(f->actor());
        idle = idle && ss.pending_total() == 0 && !env.is_down(lhash->name());
        if (idle) return;
        env.advance(cfg_.vm.timeout);
        timers();
    }
}

std::map<InodeNumber, Idata> Deployment::user_itbl() const
{
    std::map<InodeNumber, Idata> out;
    for (const auto& [ino, d] : lhash->itbl())
        if (!(ino == kItblIno)) out.emplace(ino, d);
    return out;
}

std::map<Digest, std::map<InodeNumber, std::uint64_t>> Deployment::server_refs() const
{
    std::map<Digest, std::map<InodeNumber, std::uint64_t>> out;
    for (const auto& [blk, b] : ss.blocks()) {
        std::map<InodeNumber, std::uint64_t> refs;
        for (const auto& [ino, n] : b.refs)
            if (!(ino == kItblIno) && ino.local_seq != kScratchSeq && n) refs.emplace(ino, n);
        if (!refs.empty()) out.emplace(blk, std::move(refs));
    }
    return out;
}

std::optional<Bytes> Deployment::peek_plain(const Digest& blk, FgrpId fgrp) const
{
    auto it = ss.blocks().find(blk);
    if (it == ss.blocks().end() || !all_keys.contains(fgrp)) return std::nullopt;
    try {
        return decrypt(all_keys.at(fgrp), it->second.data);
    } catch (const Error&) {
        return std::nullopt;
    }
}

std::optional<Inode> Deployment::peek_inode(InodeNumber ino) const
{
    auto d = lhash->idata(ino);
    auto fg = lhash->fgrp_lookup(ino);
    if (!d || !d->exists() || !fg) return std::nullopt;
    auto plain = peek_plain(d->inode_hash, *fg);
    if (!plain) return std::nullopt;
    return decode_inode(*plain);
}

std::optional<InodeNumber> Deployment::peek_lookup(const std::string& path) const
{
    InodeNumber cur = kRootIno;
    for (const auto& name : split(path)) {
        auto inode = peek_inode(cur);
        if (!inode || inode->type != InodeType::Directory) return std::nullopt;
        Bytes content;
        for (std::size_t i = 0; i < kDirectPointers && content.size() < inode->size; ++i) {
            if (inode->direct[i].is_zero()) {
                content.resize(content.size() + kBlockSize, 0);
                continue;
            }
            auto leaf = peek_plain(inode->direct[i], inode->fgrp);
            if (!leaf) return std::nullopt;
            content.insert(content.end(), leaf->begin(), leaf->end());
        }
        if (content.size() < inode->size) return std::nullopt;
        content.resize(inode->size);
        auto entries = decode_dir(content);
        auto it = std::find_if(entries.begin(), entries.end(), [&](const DirEntry& e) { return e.name == name; });
        if (it == entries.end()) return std::nullopt;
        cur = it->ino;
    }
    return cur;
}

std::optional<Digest> Deployment::peek_block(const std::string& path, std::size_t index) const
{
    auto ino = peek_lookup(path);
    if (!ino) return std::nullopt;
    auto inode = peek_inode(*ino);
    if (!inode || index >= kDirectPointers || inode->direct[index].is_zero()) return std::nullopt;
    return inode->direct[index];
}

bool Deployment::peek_tree(const Digest& root, int depth, FgrpId fgrp, std::vector<Digest>& out) const
{
    if (root.is_zero()) return true;
    out.push_back(root);
    if (depth == 0) return true;
    auto b = peek_plain(root, fgrp);
    if (!b) return false;
    Reader r(*b);
    for (std::size_t i = 0; i < indirect_fanout(); ++i)
        if (!peek_tree(Digest(r.raw(digest_width(), "indirect.pointer")), depth - 1, fgrp, out)) return false;
    return true;
}

std::optional<std::vector<Digest>> Deployment::peek_reachable(InodeNumber ino) const
{
    auto d = lhash->idata(ino);
    if (!d || !d->exists()) return std::vector<Digest>{};
    auto inode = peek_inode(ino);
    if (!inode) return std::nullopt;
    std::vector<Digest> out{d->inode_hash};
    for (const auto& p : inode->direct)
        if (!p.is_zero()) out.push_back(p);
    for (std::size_t l = 0; l < kIndirectLevels; ++l)
        if (!peek_tree(inode->indirect[l], static_cast<int>(l) + 1, inode->fgrp, out)) return std::nullopt;
    return out;
}

std::map<Digest, std::map<InodeNumber, std::uint64_t>> Deployment::expected_refs() const
{
    std::map<Digest, std::map<InodeNumber, std::uint64_t>> out;
    for (const auto& [ino, d] : user_itbl()) {
        auto blocks = peek_reachable(ino);
        if (!blocks) continue;
        for (const auto& b : *blocks) ++out[b][ino];
    }
    return out;
}

}  // namespace safius
