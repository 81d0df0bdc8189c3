#pragma once

// PBFT ordering of ledger blocks across n = 3f+1 replicas.
//
// Sequence numbers are block heights and at most one block is in flight at a
// time: the slot being agreed on is always committed height + 1. A replica is
// a deterministic state machine driven by on_message() and on_tick(); it never
// touches the network itself, it returns the messages it wants sent.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string_view>
#include <variant>
#include <vector>

#include "medchain/ledger.hpp"

namespace medchain::pbft {

using crypto::Digest;
using crypto::PublicKey;
using crypto::Signature;
using crypto::SigningKeyPair;
using ledger::Block;
using ledger::Transaction;

using ReplicaId = std::uint32_t;

enum class MsgKind : std::uint8_t { PrePrepare = 0, Prepare, Commit, ViewChange, NewView, FetchRequest, FetchReply };

const char* to_string(MsgKind k);

template <class T>
struct Signed {
    ReplicaId sender = 0;
    T body;
    Signature signature;

    bool operator==(const Signed&) const = default;
};

struct PrePrepare {
    std::uint64_t view = 0;
    std::uint64_t height = 0;
    Block block;

    bool operator==(const PrePrepare&) const = default;
};

/// Prepare or Commit vote for (view, height, digest).
struct Vote {
    MsgKind kind = MsgKind::Prepare;
    std::uint64_t view = 0;
    std::uint64_t height = 0;
    Digest digest;

    bool operator==(const Vote&) const = default;
};

/// 2f+1 Commit votes from distinct replicas for the same (view, height, digest).
struct CommitCert {
    std::vector<Signed<Vote>> commits;

    bool operator==(const CommitCert&) const = default;
};

/// A PrePrepare plus 2f matching Prepares from distinct backups.
struct PreparedCert {
    Signed<PrePrepare> pre_prepare;
    std::vector<Signed<Vote>> prepares;

    std::uint64_t view() const { return pre_prepare.body.view; }
    std::uint64_t height() const { return pre_prepare.body.height; }
    bool operator==(const PreparedCert&) const = default;
};

struct ViewChange {
    std::uint64_t new_view = 0;
    std::uint64_t committed_height = 0;
    /// Required when committed_height > 0.
    std::optional<CommitCert> commit_proof;
    /// Highest-view prepared certificate for committed_height + 1, if any.
    std::optional<PreparedCert> prepared;

    bool operator==(const ViewChange&) const = default;
};

struct NewView {
    std::uint64_t view = 0;
    std::vector<Signed<ViewChange>> view_changes;
    /// Re-proposal of the highest-view prepared block for H_max + 1.
    std::optional<Signed<PrePrepare>> pre_prepare;

    bool operator==(const NewView&) const = default;
};

struct FetchRequest {
    std::uint64_t from_height = 0;

    bool operator==(const FetchRequest&) const = default;
};

struct FetchReply {
    std::vector<Block> blocks;
    std::vector<CommitCert> certs;

    bool operator==(const FetchReply&) const = default;
};

using Message = std::variant<Signed<PrePrepare>, Signed<Vote>, Signed<ViewChange>, Signed<NewView>,
                             Signed<FetchRequest>, Signed<FetchReply>>;
using MessagePtr = std::shared_ptr<const Message>;

MsgKind kind_of(const Message& m);
ReplicaId sender_of(const Message& m);

/// Bytes covered by a signature: domain tag, kind, sender, body.
template <class T>
Bytes signing_bytes(const Signed<T>& m);

template <class T>
Signed<T> sign_message(ReplicaId sender, T body, const crypto::PrivateKey& key);

/// True iff sender is inside the validator set and the signature verifies.
template <class T>
bool verify_message(const Signed<T>& m, const std::vector<PublicKey>& validators);

/// u8 kind | u32 sender | var body | 64-byte signature
Bytes encode_message(const Message& m);
Message decode_message(ByteView bytes);
Digest message_digest(const Message& m);

struct QuorumParams {
    std::uint32_t n = 4;

    std::uint32_t f() const { return (n - 1) / 3; }
    std::uint32_t quorum() const { return 2 * f() + 1; }
    ReplicaId primary(std::uint64_t view) const { return static_cast<ReplicaId>(view % n); }
};

/// Checks 2f+1 distinct valid Commit signatures on (height, digest).
bool verify_commit_cert(const CommitCert& cert, std::uint64_t height, const Digest& digest,
                        const std::vector<PublicKey>& validators);
bool verify_prepared_cert(const PreparedCert& cert, const std::vector<PublicKey>& validators);

enum class Behavior : std::uint8_t {
    Honest = 0,
    Equivocate,  // conflicting PrePrepares as primary; votes for everything as backup
    Mute,        // sends nothing
    Delay,       // honest logic; the network adds latency
    Alter,       // rewrites a transaction in blocks it proposes or serves
};

const char* to_string(Behavior b);
std::optional<Behavior> parse_behavior(std::string_view s);

struct ReplicaConfig {
    /// Genesis validator set; replica i signs with the key at index i.
    std::vector<PublicKey> validators;
    std::uint64_t view_timeout = 50;
    std::uint64_t batch_delay = 1;
    std::uint64_t retransmit_interval = 20;
    std::uint64_t fetch_interval = 5;
    Behavior behavior = Behavior::Honest;
};

struct Outgoing {
    /// nullopt broadcasts to every other replica.
    std::optional<ReplicaId> to;
    MessagePtr message;
};

struct CommittedBlock {
    Block block;
    std::uint64_t view = 0;
    std::vector<ledger::TxOutcome> outcomes;
};

struct RejectedTx {
    Digest tx_id;
    ledger::TxStatus status = ledger::TxStatus::Accepted;
};

struct Output {
    std::vector<Outgoing> messages;
    std::vector<CommittedBlock> commits;
    std::vector<RejectedTx> rejected;

    void append(Output&& other);
};

enum class Status : std::uint8_t { Normal = 0, ViewChanging };

struct SubmitResult {
    enum class Kind : std::uint8_t { Pooled, Duplicate, Committed, Rejected } kind = Kind::Pooled;
    ledger::TxStatus status = ledger::TxStatus::Accepted;
    std::uint64_t height = 0;
    std::optional<ledger::TxOutcome> outcome;
};

struct ReplicaStats {
    std::uint64_t misbehavior = 0;
    std::uint64_t view_changes_started = 0;
    std::uint64_t new_views_entered = 0;
    std::uint64_t blocks_fetched = 0;
};

class Replica {
public:
    Replica(ReplicaId id, SigningKeyPair keys, ReplicaConfig config, store::ContentStore* store = nullptr);

    /// Client request admission against the committed state.
    SubmitResult submit(const Transaction& tx, std::uint64_t now);
    Output on_message(const Message& msg, std::uint64_t now);
    Output on_tick(std::uint64_t now);
    /// Builds and broadcasts a PrePrepare from the pool. No-op unless this
    /// replica is the primary of its view, idle, and the pool is non-empty.
    Output propose(std::uint64_t now);
    /// Adopts an already-agreed chain as trusted history before any traffic.
    /// Every replica of a deployment must be restored from the same blocks.
    void restore(const std::vector<Block>& history);

    ReplicaId id() const { return id_; }
    std::uint64_t view() const { return view_; }
    Status status() const { return status_; }
    bool is_primary() const { return q_.primary(view_) == id_; }
    std::uint64_t height() const { return state_.height(); }
    const QuorumParams& quorum() const { return q_; }
    const ledger::LedgerState& ledger() const { return state_; }
    const std::vector<Block>& chain() const { return chain_; }
    const std::vector<CommitCert>& commit_certs() const { return certs_; }
    std::size_t pool_size() const { return pool_.size(); }
    bool has_pending_work() const;
    const ReplicaStats& stats() const { return stats_; }
    Behavior behavior() const { return cfg_.behavior; }
    /// Fault injection: switch this replica's behavior mid-run.
    void set_behavior(Behavior b) { cfg_.behavior = b; }

private:
    struct PoolEntry {
        Transaction tx;
        Digest id;
        std::uint64_t arrival = 0;
    };

    using VoteKey = std::pair<std::uint64_t, Digest>;

    struct Slot {
        std::map<std::uint64_t, Signed<PrePrepare>> pre_prepares;  // accepted, per view
        std::map<VoteKey, std::map<ReplicaId, Signed<Vote>>> prepares;
        std::map<VoteKey, std::map<ReplicaId, Signed<Vote>>> commits;
        std::map<Digest, Block> blocks;  // validated candidates
        std::optional<PreparedCert> prepared;
        std::set<std::uint64_t> commit_sent;
        std::vector<MessagePtr> sent;  // for retransmission
    };

    template <class T>
    MessagePtr make(T body);
    void send(Output& out, MessagePtr m, std::optional<ReplicaId> to = std::nullopt);
    void handle(const Message& msg, std::uint64_t now, Output& out);
    void finish(Output& out) const;
    void propose_into(std::uint64_t now, Output& out);
    void maybe_fetch(std::uint64_t now, Output& out);

    void on_pre_prepare(const Signed<PrePrepare>& m, std::uint64_t now, Output& out);
    void on_vote(const Signed<Vote>& m, std::uint64_t now, Output& out);
    void on_view_change(const Signed<ViewChange>& m, std::uint64_t now, Output& out);
    void on_new_view(const Signed<NewView>& m, std::uint64_t now, Output& out);
    void on_fetch_request(const Signed<FetchRequest>& m, Output& out);
    void on_fetch_reply(const Signed<FetchReply>& m, std::uint64_t now, Output& out);

    void accept_pre_prepare(const Signed<PrePrepare>& m, std::uint64_t now, Output& out);
    void check_prepared(std::uint64_t view, const Digest& d, std::uint64_t now, Output& out);
    void check_committed(std::uint64_t view, const Digest& d, std::uint64_t now, Output& out);
    void commit_block(const Block& block, CommitCert cert, std::uint64_t view, std::uint64_t now, Output& out);
    void buffer_future(const Message& m, std::uint64_t height);
    void note_height(ReplicaId from, std::uint64_t committed_at_least, std::uint64_t now, Output& out);

    void start_view_change(std::uint64_t target, std::uint64_t now, Output& out);
    void try_new_view(std::uint64_t view, std::uint64_t now, Output& out);
    void enter_new_view(const MessagePtr& msg, std::uint64_t now, Output& out);
    bool valid_view_change(const Signed<ViewChange>& m) const;
    /// (H_max, highest-view prepared certificate for H_max + 1)
    std::pair<std::uint64_t, const PreparedCert*> select(const std::vector<Signed<ViewChange>>& vcs) const;

    Block alter(Block b) const;

    ReplicaId id_;
    SigningKeyPair keys_;
    ReplicaConfig cfg_;
    QuorumParams q_;
    store::ContentStore* store_;

    std::uint64_t view_ = 0;
    Status status_ = Status::Normal;
    ledger::LedgerState state_;
    std::vector<Block> chain_;
    std::vector<CommitCert> certs_;
    std::uint64_t genesis_height_ = 0;
    Slot slot_;
    std::map<std::uint64_t, std::vector<Message>> future_;

    std::vector<PoolEntry> pool_;
    std::set<Digest> pool_ids_;
    std::map<Digest, std::pair<std::uint64_t, ledger::TxOutcome>> committed_txs_;

    std::map<std::uint64_t, std::map<ReplicaId, Signed<ViewChange>>> view_changes_;
    std::set<std::uint64_t> new_view_sent_;
    std::optional<MessagePtr> last_new_view_;
    std::optional<MessagePtr> vc_msg_;
    std::vector<Message> future_view_;
    std::map<ReplicaId, std::uint64_t> new_view_forwarded_;
    std::uint64_t vc_started_ = 0;
    std::uint32_t vc_attempts_ = 0;
    std::uint64_t timer_start_ = 0;
    bool timer_armed_ = false;
    std::uint64_t last_retransmit_ = 0;

    std::uint64_t known_height_ = 0;
    std::optional<ReplicaId> fetch_hint_;
    std::uint64_t last_fetch_ = 0;
    bool fetched_once_ = false;

    ReplicaStats stats_;
};

}  // namespace medchain::pbft
