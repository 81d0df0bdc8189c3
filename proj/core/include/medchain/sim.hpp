#pragma once

// Deterministic discrete-event network. Replicas, patient/staff clients and
// storage nodes exchange messages through a single event queue ordered by
// (delivery tick, insertion sequence); randomness comes from one seeded
// generator, so identical seeds and inputs give identical traces.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "medchain/pbft.hpp"

namespace medchain::sim {

using NodeId = std::string;

enum class NodeRole : std::uint8_t { Replica, Patient, Staff, Storage };

const char* to_string(NodeRole r);

struct SimConfig {
    std::uint64_t seed = 1;
    std::uint32_t replicas = 4;
    /// Client and storage roster; replicas are named r0..r{n-1} implicitly.
    std::vector<std::pair<NodeId, NodeRole>> nodes;
    std::uint32_t replication = 0;
    std::uint64_t delay_min = 1;
    std::uint64_t delay_max = 3;
    double drop_rate = 0.0;
    std::map<pbft::ReplicaId, pbft::Behavior> byzantine;
    std::uint64_t byz_delay = 20;
    std::uint32_t rate_limit = 10;
    std::uint64_t window = 100;
    std::uint64_t view_timeout = 50;
    std::uint64_t batch_delay = 1;
    std::uint64_t client_timeout = 200;
    std::uint64_t max_ticks = 200000;
    /// Keep every trace line in memory (the running hash is always kept).
    bool record_trace = true;

    std::uint32_t f() const { return (replicas - 1) / 3; }
    std::vector<NodeId> storage_ids() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Applies one `key = value` setting. Throws ConfigError on unknown keys or bad values.
void apply_setting(SimConfig& cfg, const std::string& key, const std::string& value);
/// Parses a whole key-value file; blank lines and `#` comments are ignored.
SimConfig parse_sim_config(const std::string& text);
std::string replica_name(pbft::ReplicaId i);

struct ClientRequest {
    ledger::Transaction tx;
    /// Replicas hold the request until they have committed this height.
    std::uint64_t min_height = 0;
};

struct ClientReply {
    crypto::Digest tx_id;
    bool committed = false;
    ledger::TxStatus status = ledger::TxStatus::Accepted;
    std::uint64_t height = 0;
    std::optional<ledger::DataResult> data;
};

using Payload = std::variant<ClientRequest, ClientReply, pbft::MessagePtr>;

enum class SendResult : std::uint8_t { Scheduled, Dropped, RateLimited, UnknownNode, Partitioned };

const char* to_string(SendResult r);

struct Event {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    NodeId from;
    NodeId to;
    std::shared_ptr<const Payload> payload;
    std::string kind;
    crypto::Digest digest;
};

struct EventOrder {
    bool operator()(const Event& a, const Event& b) const {
        return a.tick != b.tick ? a.tick > b.tick : a.seq > b.seq;
    }
};

/// Priority queue over (tick, seq); seq is the insertion counter.
class EventQueue {
public:
    void push(Event e);
    bool ready(std::uint64_t tick) const { return !q_.empty() && q_.top().tick <= tick; }
    Event pop();
    std::size_t size() const { return q_.size(); }
    bool empty() const { return q_.empty(); }
    std::uint64_t next_seq() const { return seq_; }

private:
    std::priority_queue<Event, std::vector<Event>, EventOrder> q_;
    std::uint64_t seq_ = 0;
};

struct Request {
    std::uint64_t id = 0;
    NodeId client;
    ledger::Transaction tx;
    crypto::Digest tx_id;
    std::uint64_t min_height = 0;
    std::uint64_t submitted_at = 0;
    std::uint64_t last_sent = 0;
    std::uint32_t attempts = 0;
    std::map<NodeId, ClientReply> replies;
    std::optional<ClientReply> result;
    std::uint64_t completed_at = 0;

    bool done() const { return result.has_value(); }
};

struct TraceStats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
    std::uint64_t rate_limited = 0;
    std::uint64_t unknown_node = 0;
    std::uint64_t partitioned = 0;
};

enum class FaultKind : std::uint8_t { TamperStore, Crash, Partition, Flood, AlterBlock, Recover };

struct Fault {
    FaultKind kind = FaultKind::Crash;
    /// Node id, or for TamperStore the content digest in hex.
    std::string target;
    /// TamperStore: holder id or "all". Partition: groups separated by '|', members by ','.
    std::string arg;
    /// Flood: transactions per window. Partition/Crash: tick at which it heals (0 = never).
    std::uint64_t amount = 0;
};

class FaultError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunResult {
    bool reached = false;
    std::uint64_t tick = 0;
};

class Simulation {
public:
    /// `history` is adopted by every replica as already-agreed chain; `store`
    /// replaces the empty content store (its node ids become storage nodes).
    explicit Simulation(SimConfig cfg, const std::vector<ledger::Block>& history = {},
                        std::optional<store::ContentStore> store = std::nullopt);

    const SimConfig& config() const { return cfg_; }
    std::uint64_t now() const { return now_; }
    bool in_roster(const NodeId& id) const { return roster_.count(id) > 0; }

    SendResult send(const NodeId& from, const NodeId& to, Payload payload);

    /// Advances one tick: delivers due events, then ticks every live node.
    void step();
    RunResult run_until(const std::function<bool()>& done, std::uint64_t max_ticks);

    /// Client side: broadcasts a transaction to every replica and tracks f+1 matching replies.
    std::uint64_t submit(const NodeId& client, const ledger::Transaction& tx, std::uint64_t min_height = 0);
    const Request& request(std::uint64_t id) const { return requests_.at(id); }

    void inject(const Fault& fault);

    pbft::Replica& replica(pbft::ReplicaId i) { return *replicas_.at(i).replica; }
    const pbft::Replica& replica(pbft::ReplicaId i) const { return *replicas_.at(i).replica; }
    std::uint32_t replica_count() const { return static_cast<std::uint32_t>(replicas_.size()); }
    store::ContentStore& store() { return store_; }
    const store::ContentStore& store() const { return store_; }

    /// Replicas that are neither configured nor faulted Byzantine.
    std::set<pbft::ReplicaId> honest() const;
    bool is_crashed(const NodeId& id) const;
    /// Highest height committed by every live honest replica.
    std::uint64_t honest_height() const;
    /// No two honest replicas committed different digests at one height.
    bool safety_holds() const;
    /// Replaying each honest replica's chain reproduces its live state digest.
    bool replay_matches() const;
    /// Highest view reached by any honest replica; each increment is one view change.
    std::uint64_t view_changes() const;

    const TraceStats& stats() const { return stats_; }
    const std::vector<std::string>& trace() const { return trace_; }
    crypto::Digest trace_hash() const;
    /// accepted client transactions per (sender, window index)
    const std::map<std::pair<NodeId, std::uint64_t>, std::uint32_t>& window_counts() const { return window_counts_; }
    const std::map<NodeId, std::uint64_t>& rate_limited_by_sender() const { return rate_limited_; }

private:
    struct ReplicaNode {
        std::unique_ptr<pbft::Replica> replica;
        std::map<crypto::Digest, std::set<NodeId>> waiters;
        std::vector<std::pair<NodeId, ClientRequest>> deferred;
    };

    struct FloodState {
        crypto::SigningKeyPair keys;
        std::uint64_t per_window = 0;
        std::uint64_t seq = 0;
    };

    SendResult send_prepared(const NodeId& from, const NodeId& to, std::shared_ptr<const Payload> payload,
                             const std::string& kind, const crypto::Digest& digest);
    void deliver(const Event& e);
    void on_replica_event(pbft::ReplicaId i, const NodeId& from, const Payload& p);
    void handle_request(pbft::ReplicaId i, const NodeId& from, const ClientRequest& req);
    void dispatch(pbft::ReplicaId i, pbft::Output out);
    void reply(pbft::ReplicaId i, const NodeId& to, ClientReply r);
    void on_client_reply(const NodeId& client, const NodeId& from, const ClientReply& r);
    void tick_clients();
    void tick_floods();
    bool partitioned(const NodeId& a, const NodeId& b) const;
    void record(std::string_view event, const NodeId& from, const NodeId& to, const std::string& kind,
                const crypto::Digest& digest);

    SimConfig cfg_;
    std::map<NodeId, NodeRole> roster_;
    std::map<NodeId, pbft::ReplicaId> replica_index_;
    std::vector<ReplicaNode> replicas_;
    store::ContentStore store_;
    std::set<crypto::Digest> replicated_;
    std::mt19937_64 rng_;

    EventQueue queue_;
    std::uint64_t now_ = 0;

    std::map<std::uint64_t, Request> requests_;
    std::map<NodeId, std::vector<std::uint64_t>> client_requests_;
    std::map<crypto::Digest, std::vector<std::uint64_t>> by_tx_;
    std::set<std::uint64_t> pending_;
    std::uint64_t next_request_ = 1;

    std::map<NodeId, std::uint64_t> crashed_;  // node -> heal tick (0 = never)
    std::vector<std::set<NodeId>> partition_;
    std::uint64_t partition_until_ = 0;
    std::map<NodeId, FloodState> floods_;
    std::set<pbft::ReplicaId> faulted_;

    std::map<std::pair<NodeId, std::uint64_t>, std::set<crypto::Digest>> window_ids_;
    std::map<std::pair<NodeId, std::uint64_t>, std::uint32_t> window_counts_;
    std::map<NodeId, std::uint64_t> rate_limited_;

    TraceStats stats_;
    std::vector<std::string> trace_;
    crypto::Digest trace_acc_;
};

}  // namespace medchain::sim
