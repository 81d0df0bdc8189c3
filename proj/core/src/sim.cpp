#include "medchain/sim.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace medchain::sim {

namespace {

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return x;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

NodeRole to_role(const std::string& s) {
    if (s == "patient") return NodeRole::Patient;
    if (s == "staff") return NodeRole::Staff;
    if (s == "storage") return NodeRole::Storage;
    throw ConfigError("nodes: unknown role '" + s + "'");
}

bool same_reply(const ClientReply& a, const ClientReply& b) {
    if (a.committed != b.committed || a.status != b.status || a.height != b.height) return false;
    if (a.data.has_value() != b.data.has_value()) return false;
    if (!a.data) return true;
    return a.data->outcome == b.data->outcome && a.data->digest == b.data->digest &&
           a.data->ciphertext == b.data->ciphertext;
}

}  // namespace

const char* to_string(NodeRole r) {
    switch (r) {
        case NodeRole::Replica: return "replica";
        case NodeRole::Patient: return "patient";
        case NodeRole::Staff: return "staff";
        case NodeRole::Storage: return "storage";
    }
    return "unknown";
}

const char* to_string(SendResult r) {
    switch (r) {
        case SendResult::Scheduled: return "scheduled";
        case SendResult::Dropped: return "dropped";
        case SendResult::RateLimited: return "rate-limited";
        case SendResult::UnknownNode: return "unknown-node";
        case SendResult::Partitioned: return "partitioned";
    }
    return "unknown";
}

std::string replica_name(pbft::ReplicaId i) {
    return "r" + std::to_string(i);
}

std::vector<NodeId> SimConfig::storage_ids() const {
    std::vector<NodeId> out;
    for (const auto& [id, role] : nodes)
        if (role == NodeRole::Storage) out.push_back(id);
    return out;
}

void apply_setting(SimConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "replicas") cfg.replicas = static_cast<std::uint32_t>(to_u64(key, value));
    else if (key == "replication") cfg.replication = static_cast<std::uint32_t>(to_u64(key, value));
    else if (key == "delay_min") cfg.delay_min = to_u64(key, value);
    else if (key == "delay_max") cfg.delay_max = to_u64(key, value);
    else if (key == "drop_rate") cfg.drop_rate = to_double(key, value);
    else if (key == "byz_delay") cfg.byz_delay = to_u64(key, value);
    else if (key == "rate_limit") cfg.rate_limit = static_cast<std::uint32_t>(to_u64(key, value));
    else if (key == "window") cfg.window = to_u64(key, value);
    else if (key == "view_timeout") cfg.view_timeout = to_u64(key, value);
    else if (key == "batch_delay") cfg.batch_delay = to_u64(key, value);
    else if (key == "client_timeout") cfg.client_timeout = to_u64(key, value);
    else if (key == "max_ticks") cfg.max_ticks = to_u64(key, value);
    else if (key == "nodes") {
        for (const auto& item : split(value, ' ')) {
            auto colon = item.find(':');
            if (colon == std::string::npos) throw ConfigError("nodes: expected id:role, got '" + item + "'");
            cfg.nodes.emplace_back(item.substr(0, colon), to_role(item.substr(colon + 1)));
        }
    } else if (key == "storage") {
        auto count = to_u64(key, value);
        for (std::uint64_t i = 0; i < count; ++i) cfg.nodes.emplace_back("s" + std::to_string(i), NodeRole::Storage);
    } else if (key == "byzantine") {
        for (const auto& item : split(value, ' ')) {
            auto colon = item.find(':');
            if (colon == std::string::npos || item.size() < 2 || item[0] != 'r')
                throw ConfigError("byzantine: expected rN:behavior, got '" + item + "'");
            auto id = to_u64(key, item.substr(1, colon - 1));
            auto b = pbft::parse_behavior(item.substr(colon + 1));
            if (!b) throw ConfigError("byzantine: unknown behavior '" + item.substr(colon + 1) + "'");
            cfg.byzantine[static_cast<pbft::ReplicaId>(id)] = *b;
        }
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

SimConfig parse_sim_config(const std::string& text) {
    SimConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

void EventQueue::push(Event e) {
    e.seq = seq_++;
    q_.push(std::move(e));
}

Event EventQueue::pop() {
    Event e = q_.top();
    q_.pop();
    return e;
}

Simulation::Simulation(SimConfig cfg, const std::vector<ledger::Block>& history,
                       std::optional<store::ContentStore> store)
    : cfg_(std::move(cfg)), store_(cfg_.storage_ids()), rng_(cfg_.seed) {
    if (store) {
        store_ = std::move(*store);
        for (const auto& id : store_.node_ids())
            if (std::find_if(cfg_.nodes.begin(), cfg_.nodes.end(), [&](const auto& n) { return n.first == id; }) ==
                cfg_.nodes.end())
                cfg_.nodes.emplace_back(id, NodeRole::Storage);
    }
    if (cfg_.replicas < 4) throw ConfigError("replicas: need at least 4");
    if (cfg_.delay_min < 1 || cfg_.delay_max < cfg_.delay_min) throw ConfigError("delay: need 1 <= delay_min <= delay_max");
    if (cfg_.drop_rate < 0.0 || cfg_.drop_rate >= 1.0) throw ConfigError("drop_rate: must be in [0, 1)");
    if (cfg_.rate_limit == 0 || cfg_.window == 0) throw ConfigError("rate_limit and window must be positive");
    if (cfg_.replication > cfg_.storage_ids().size()) throw ConfigError("replication exceeds storage node count");
    for (const auto& [id, _] : cfg_.byzantine)
        if (id >= cfg_.replicas) throw ConfigError("byzantine: no replica r" + std::to_string(id));

    crypto::Rng keygen(cfg_.seed);
    pbft::ReplicaConfig rc;
    rc.view_timeout = cfg_.view_timeout;
    rc.batch_delay = cfg_.batch_delay;
    std::vector<crypto::SigningKeyPair> keys;
    for (std::uint32_t i = 0; i < cfg_.replicas; ++i) {
        keys.push_back(crypto::gen_sig_keypair(keygen));
        rc.validators.push_back(keys.back().public_key);
    }
    for (std::uint32_t i = 0; i < cfg_.replicas; ++i) {
        auto c = rc;
        if (auto it = cfg_.byzantine.find(i); it != cfg_.byzantine.end()) c.behavior = it->second;
        replicas_.push_back({std::make_unique<pbft::Replica>(i, keys[i], c, &store_), {}, {}});
        if (!history.empty()) replicas_.back().replica->restore(history);
        roster_[replica_name(i)] = NodeRole::Replica;
        replica_index_[replica_name(i)] = i;
    }
    for (const auto& [id, role] : cfg_.nodes) {
        if (!roster_.emplace(id, role).second) throw ConfigError("nodes: duplicate id '" + id + "'");
    }
}

void Simulation::record(std::string_view event, const NodeId& from, const NodeId& to, const std::string& kind,
                        const crypto::Digest& digest) {
    std::string line = std::to_string(now_);
    line.append(" ").append(event).append(" ").append(from).append(" ").append(to).append(" ");
    line.append(kind).append(" ").append(digest.hex());
    ByteWriter w;
    w.fixed(trace_acc_.bytes).var(line);
    trace_acc_ = crypto::hash(w.bytes());
    if (cfg_.record_trace) trace_.push_back(std::move(line));
}

crypto::Digest Simulation::trace_hash() const {
    return trace_acc_;
}

bool Simulation::partitioned(const NodeId& a, const NodeId& b) const {
    if (partition_.empty()) return false;
    auto group = [&](const NodeId& n) -> int {
        for (std::size_t i = 0; i < partition_.size(); ++i)
            if (partition_[i].count(n)) return static_cast<int>(i);
        return -1;
    };
    int ga = group(a), gb = group(b);
    return ga >= 0 && gb >= 0 && ga != gb;
}

SendResult Simulation::send(const NodeId& from, const NodeId& to, Payload payload) {
    std::string kind;
    crypto::Digest digest;
    if (const auto* req = std::get_if<ClientRequest>(&payload)) {
        kind = "request";
        digest = req->tx.id();
    } else if (const auto* rep = std::get_if<ClientReply>(&payload)) {
        kind = "reply";
        digest = rep->tx_id;
    } else {
        const auto& m = std::get<pbft::MessagePtr>(payload);
        kind = pbft::to_string(pbft::kind_of(*m));
        digest = pbft::message_digest(*m);
    }
    return send_prepared(from, to, std::make_shared<const Payload>(std::move(payload)), kind, digest);
}

SendResult Simulation::send_prepared(const NodeId& from, const NodeId& to, std::shared_ptr<const Payload> payload,
                                     const std::string& kind, const crypto::Digest& digest) {
    if (!in_roster(from) || !in_roster(to)) {
        ++stats_.unknown_node;
        record("reject-roster", from, to, kind, digest);
        return SendResult::UnknownNode;
    }
    if (std::holds_alternative<ClientRequest>(*payload) && roster_.at(from) != NodeRole::Replica) {
        const auto key = std::make_pair(from, now_ / cfg_.window);
        auto& ids = window_ids_[key];
        if (!ids.count(digest)) {
            if (ids.size() >= cfg_.rate_limit) {
                ++stats_.rate_limited;
                ++rate_limited_[from];
                record("rate-limited", from, to, kind, digest);
                return SendResult::RateLimited;
            }
            ids.insert(digest);
            ++window_counts_[key];
        }
    }
    if (partitioned(from, to)) {
        ++stats_.partitioned;
        record("partitioned", from, to, kind, digest);
        return SendResult::Partitioned;
    }
    if (cfg_.drop_rate > 0.0 && static_cast<double>(rng_() >> 11) * 0x1.0p-53 < cfg_.drop_rate) {
        ++stats_.dropped;
        record("drop", from, to, kind, digest);
        return SendResult::Dropped;
    }
    auto delay = cfg_.delay_min + rng_() % (cfg_.delay_max - cfg_.delay_min + 1);
    if (auto it = replica_index_.find(from);
        it != replica_index_.end() && replica(it->second).behavior() == pbft::Behavior::Delay)
        delay += cfg_.byz_delay;
    ++stats_.sent;
    record("send", from, to, kind, digest);
    queue_.push({now_ + delay, 0, from, to, std::move(payload), kind, digest});
    return SendResult::Scheduled;
}

void Simulation::step() {
    ++now_;
    for (auto it = crashed_.begin(); it != crashed_.end();) {
        if (it->second != 0 && it->second <= now_) it = crashed_.erase(it);
        else ++it;
    }
    if (partition_until_ != 0 && partition_until_ <= now_) {
        partition_.clear();
        partition_until_ = 0;
    }
    while (queue_.ready(now_)) deliver(queue_.pop());
    for (pbft::ReplicaId i = 0; i < replicas_.size(); ++i)
        if (!is_crashed(replica_name(i))) dispatch(i, replicas_[i].replica->on_tick(now_));
    tick_clients();
    tick_floods();
}

RunResult Simulation::run_until(const std::function<bool()>& done, std::uint64_t max_ticks) {
    const auto limit = now_ + max_ticks;
    while (!done()) {
        if (now_ >= limit) return {false, now_};
        step();
    }
    return {true, now_};
}

bool Simulation::is_crashed(const NodeId& id) const {
    return crashed_.count(id) > 0;
}

void Simulation::deliver(const Event& e) {
    if (is_crashed(e.to)) {
        record("lost", e.from, e.to, e.kind, e.digest);
        return;
    }
    ++stats_.delivered;
    record("recv", e.from, e.to, e.kind, e.digest);
    if (auto it = replica_index_.find(e.to); it != replica_index_.end()) {
        on_replica_event(it->second, e.from, *e.payload);
    } else if (const auto* r = std::get_if<ClientReply>(e.payload.get())) {
        on_client_reply(e.to, e.from, *r);
    }
}

void Simulation::on_replica_event(pbft::ReplicaId i, const NodeId& from, const Payload& p) {
    if (const auto* m = std::get_if<pbft::MessagePtr>(&p)) {
        dispatch(i, replicas_[i].replica->on_message(**m, now_));
    } else if (const auto* req = std::get_if<ClientRequest>(&p)) {
        if (roster_.at(from) != NodeRole::Replica) handle_request(i, from, *req);
    }
}

void Simulation::handle_request(pbft::ReplicaId i, const NodeId& from, const ClientRequest& req) {
    auto& node = replicas_[i];
    if (req.min_height > node.replica->height()) {
        node.deferred.emplace_back(from, req);
        return;
    }
    const auto id = req.tx.id();
    auto r = node.replica->submit(req.tx, now_);
    switch (r.kind) {
        case pbft::SubmitResult::Kind::Committed:
            reply(i, from, {id, true, r.outcome->status, r.height, r.outcome->data});
            break;
        case pbft::SubmitResult::Kind::Rejected:
            reply(i, from, {id, false, r.status, 0, std::nullopt});
            break;
        case pbft::SubmitResult::Kind::Pooled:
        case pbft::SubmitResult::Kind::Duplicate:
            node.waiters[id].insert(from);
            break;
    }
}

void Simulation::dispatch(pbft::ReplicaId i, pbft::Output out) {
    const auto self = replica_name(i);
    for (auto& o : out.messages) {
        const auto kind = std::string(pbft::to_string(pbft::kind_of(*o.message)));
        const auto digest = pbft::message_digest(*o.message);
        auto payload = std::make_shared<const Payload>(o.message);
        for (pbft::ReplicaId to = 0; to < replicas_.size(); ++to) {
            if (o.to ? *o.to != to : to == i) continue;
            send_prepared(self, replica_name(to), payload, kind, digest);
        }
    }
    auto& node = replicas_[i];
    for (auto& c : out.commits) {
        for (std::size_t k = 0; k < c.block.txs.size(); ++k) {
            const auto id = c.block.txs[k].id();
            const auto& outcome = c.outcomes[k];
            if (auto it = node.waiters.find(id); it != node.waiters.end()) {
                for (const auto& client : it->second)
                    reply(i, client, {id, true, outcome.status, c.block.header.height, outcome.data});
                node.waiters.erase(it);
            }
            if (cfg_.replication > 0 && outcome.data && outcome.data->outcome == ledger::DataOutcome::Written &&
                outcome.data->digest && replicated_.insert(*outcome.data->digest).second) {
                try {
                    store_.replicate(*outcome.data->digest, cfg_.replication);
                } catch (const std::out_of_range&) {
                    replicated_.erase(*outcome.data->digest);
                }
            }
        }
    }
    for (const auto& r : out.rejected) {
        if (auto it = node.waiters.find(r.tx_id); it != node.waiters.end()) {
            for (const auto& client : it->second) reply(i, client, {r.tx_id, false, r.status, 0, std::nullopt});
            node.waiters.erase(it);
        }
    }
    if (!out.commits.empty() && !node.deferred.empty()) {
        auto deferred = std::move(node.deferred);
        node.deferred.clear();
        for (auto& [from, req] : deferred) handle_request(i, from, req);
    }
}

void Simulation::reply(pbft::ReplicaId i, const NodeId& to, ClientReply r) {
    if (replicas_[i].replica->behavior() == pbft::Behavior::Mute) return;
    send(replica_name(i), to, std::move(r));
}

std::uint64_t Simulation::submit(const NodeId& client, const ledger::Transaction& tx, std::uint64_t min_height) {
    auto role = roster_.find(client);
    if (role == roster_.end() || role->second == NodeRole::Replica)
        throw std::invalid_argument("submit: '" + client + "' is not a client in the roster");
    Request r;
    r.id = next_request_++;
    r.client = client;
    r.tx = tx;
    r.tx_id = tx.id();
    r.min_height = min_height;
    r.submitted_at = now_;
    r.last_sent = now_;
    r.attempts = 1;
    by_tx_[r.tx_id].push_back(r.id);
    pending_.insert(r.id);
    auto id = r.id;
    requests_.emplace(id, std::move(r));
    for (pbft::ReplicaId i = 0; i < replicas_.size(); ++i) send(client, replica_name(i), ClientRequest{tx, min_height});
    return id;
}

void Simulation::on_client_reply(const NodeId& client, const NodeId& from, const ClientReply& r) {
    if (!replica_index_.count(from)) return;
    auto it = by_tx_.find(r.tx_id);
    if (it == by_tx_.end()) return;
    for (auto id : it->second) {
        auto& req = requests_.at(id);
        if (req.client != client || req.done()) continue;
        req.replies[from] = r;
        std::size_t matching = 0;
        for (const auto& [_, other] : req.replies) matching += same_reply(other, r) ? 1 : 0;
        if (matching >= cfg_.f() + 1) {
            req.result = r;
            req.completed_at = now_;
            pending_.erase(id);
        }
    }
}

void Simulation::tick_clients() {
    for (auto id : pending_) {
        auto& req = requests_.at(id);
        if (is_crashed(req.client) || now_ - req.last_sent < cfg_.client_timeout) continue;
        req.last_sent = now_;
        ++req.attempts;
        for (pbft::ReplicaId i = 0; i < replicas_.size(); ++i)
            send(req.client, replica_name(i), ClientRequest{req.tx, req.min_height});
    }
}

void Simulation::tick_floods() {
    for (auto& [node, flood] : floods_) {
        if (is_crashed(node)) continue;
        const auto w = cfg_.window;
        const auto phase = now_ % w;
        const auto count = flood.per_window * (phase + 1) / w - flood.per_window * phase / w;
        for (std::uint64_t k = 0; k < count; ++k) {
            // Junk traffic: well-formed but never signed, so anything that slips
            // past the limiter is rejected at admission.
            ledger::Transaction tx{flood.keys.public_key, ++flood.seq,
                                   ledger::make_access_payload(flood.keys.public_key, flood.keys.public_key, {}), {}};
            for (pbft::ReplicaId i = 0; i < replicas_.size(); ++i) send(node, replica_name(i), ClientRequest{tx, 0});
        }
    }
}

void Simulation::inject(const Fault& fault) {
    switch (fault.kind) {
        case FaultKind::TamperStore: {
            auto key = crypto::Digest::from_hex(fault.target);
            if (!key || !store_.contains(*key)) throw FaultError("tamper-store: no entry '" + fault.target + "'");
            auto holders = store_.holders(*key);
            const auto which = fault.arg.empty() ? std::string(store::ContentStore::kLocal) : fault.arg;
            bool hit = false;
            for (const auto& h : holders) {
                if (which != "all" && which != h) continue;
                hit = store_.tamper(*key, h, rng_(), static_cast<std::uint8_t>(1u << (rng_() % 8))) || hit;
            }
            if (!hit) throw FaultError("tamper-store: holder '" + which + "' has no copy");
            break;
        }
        case FaultKind::Crash:
            if (!in_roster(fault.target)) throw FaultError("crash: unknown node '" + fault.target + "'");
            crashed_[fault.target] = fault.amount;
            break;
        case FaultKind::Recover:
            if (!in_roster(fault.target)) throw FaultError("recover: unknown node '" + fault.target + "'");
            crashed_.erase(fault.target);
            break;
        case FaultKind::Partition: {
            std::vector<std::set<NodeId>> groups;
            for (const auto& g : split(fault.arg, '|')) {
                std::set<NodeId> members;
                for (const auto& m : split(g, ',')) {
                    if (!in_roster(m)) throw FaultError("partition: unknown node '" + m + "'");
                    members.insert(m);
                }
                groups.push_back(std::move(members));
            }
            if (groups.size() < 2) throw FaultError("partition: need at least two groups");
            partition_ = std::move(groups);
            partition_until_ = fault.amount;
            break;
        }
        case FaultKind::Flood: {
            auto role = roster_.find(fault.target);
            if (role == roster_.end() || role->second == NodeRole::Replica || role->second == NodeRole::Storage)
                throw FaultError("flood: '" + fault.target + "' is not a client node");
            crypto::Rng rng(crypto::hash(fault.target).bytes);
            floods_[fault.target] = {crypto::gen_sig_keypair(rng), fault.amount, 0};
            break;
        }
        case FaultKind::AlterBlock: {
            auto it = replica_index_.find(fault.target);
            if (it == replica_index_.end()) throw FaultError("alter-block: unknown replica '" + fault.target + "'");
            replica(it->second).set_behavior(pbft::Behavior::Alter);
            faulted_.insert(it->second);
            break;
        }
    }
}

std::set<pbft::ReplicaId> Simulation::honest() const {
    std::set<pbft::ReplicaId> out;
    for (pbft::ReplicaId i = 0; i < replicas_.size(); ++i)
        if (!cfg_.byzantine.count(i) && !faulted_.count(i)) out.insert(i);
    return out;
}

std::uint64_t Simulation::honest_height() const {
    std::optional<std::uint64_t> h;
    for (auto i : honest()) {
        if (is_crashed(replica_name(i))) continue;
        auto x = replica(i).height();
        h = h ? std::min(*h, x) : x;
    }
    return h.value_or(0);
}

bool Simulation::safety_holds() const {
    std::map<std::uint64_t, crypto::Digest> seen;
    for (auto i : honest()) {
        for (const auto& b : replica(i).chain()) {
            auto [it, fresh] = seen.emplace(b.header.height, b.hash());
            if (!fresh && it->second != b.hash()) return false;
        }
    }
    return true;
}

bool Simulation::replay_matches() const {
    for (auto i : honest()) {
        const auto& r = replica(i);
        try {
            if (ledger::replay(r.chain()).state_digest() != r.ledger().state_digest()) return false;
        } catch (const ledger::ChainError&) {
            return false;
        }
    }
    return true;
}

std::uint64_t Simulation::view_changes() const {
    std::uint64_t v = 0;
    for (auto i : honest()) v = std::max(v, replica(i).view());
    return v;
}

}  // namespace medchain::sim
