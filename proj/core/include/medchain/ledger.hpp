#pragma once

// Ledger memory and the transaction state machine.
//
// LedgerState is a deterministic fold over the committed chain: the policy
// log (append-only, indexed by both parties' addresses), the data-pointer
// index keyed by (patient, data type), the key directory, per-sender sequence
// numbers and the audit log. Authorization resolves against the most recent
// policy for a (patient, staff) pair; an empty policy revokes everything.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "medchain/identity.hpp"
#include "medchain/store.hpp"
#include "medchain/tx.hpp"

namespace medchain::ledger {

enum class TxStatus : std::uint8_t {
    Accepted = 0,
    BadSignature,
    StaleSeq,
    UnknownSender,
    AlreadyRegistered,
    NotOwner,            // access tx not sent by the granting patient
    InconsistentPolicy,  // payload keys disagree with the embedded policy
    UnregisteredParty,
    Denied,              // permission gate failed
    BadAttachment,       // write ciphertext does not hash to the announced digest
};

const char* to_string(TxStatus s);

enum class AuditKind : std::uint8_t { Grant = 0, Revoke, Write, Read };

const char* to_string(AuditKind k);

struct AuditEvent {
    std::uint64_t height = 0;
    AuditKind kind = AuditKind::Grant;
    PublicKey actor;
    PublicKey patient;
    std::optional<PublicKey> staff;
    std::vector<std::string> types;
    std::optional<Digest> digest;

    bool operator==(const AuditEvent&) const = default;
};

struct ChainTip {
    std::uint64_t height = 0;
    Digest hash{};

    bool operator==(const ChainTip&) const = default;
};

class LedgerState {
public:
    ChainTip tip() const { return tip_; }
    std::uint64_t height() const { return tip_.height; }

    const identity::KeyDirectory& directory() const { return directory_; }
    std::optional<std::uint64_t> last_seq(const PublicKey& sender) const;

    const std::vector<AccessPayload>& policy_log() const { return policy_log_; }
    /// Indices into policy_log() recorded under hash(pk), for patient or staff keys.
    std::vector<std::size_t> policies_for(const Digest& address) const;
    const AccessPayload* latest_policy(const PublicKey& patient, const PublicKey& staff) const;
    /// Digests written for (patient, type); nullptr when none.
    const std::set<Digest>* data_digests(const PublicKey& patient, const std::string& type) const;
    std::size_t data_entry_count() const;

    const std::vector<AuditEvent>& events() const { return events_; }

    /// Canonical encoding with every map serialized in sorted key order.
    Bytes encode() const;
    Digest state_digest() const { return crypto::hash(encode()); }

    bool operator==(const LedgerState&) const = default;

private:
    friend std::uint8_t apply_access_tx(LedgerState&, const Transaction&);
    friend struct Mutator;

    ChainTip tip_;
    identity::KeyDirectory directory_;
    std::map<PublicKey, std::uint64_t> seq_tracker_;
    std::vector<AccessPayload> policy_log_;
    std::map<Digest, std::vector<std::size_t>> policy_index_;
    std::map<std::pair<PublicKey, PublicKey>, std::size_t> latest_;
    std::map<std::pair<PublicKey, std::string>, std::set<Digest>> data_index_;
    std::vector<AuditEvent> events_;
};

/// Admission check: would `tx` be accepted against `state` right now?
/// Never mutates. Signature checking can be skipped when already done.
TxStatus check_tx(const LedgerState& state, const Transaction& tx, bool verify_signature = true);

/// Access-control transaction. Returns s = 1 and appends the policy when the
/// sender is the granting patient and both parties are registered; s = 0 and
/// no state change otherwise. Precondition: signature and seq already checked.
std::uint8_t apply_access_tx(LedgerState& state, const Transaction& tx);

/// true iff requester is the target patient, or the latest policy from
/// target_patient to requester contains `type`.
bool policy_check(const LedgerState& state, const PublicKey& requester, const std::string& type,
                  const PublicKey& target_patient);

enum class DataOutcome : std::uint8_t {
    Denied = 0,      // empty result: permission gate failed
    Written,         // digest returned
    Served,          // ciphertext returned
    NotIndexed,      // empty result: digest not recorded for (patient, type)
    IntegrityAlarm,  // digest indexed but the store copy is missing or altered
    Recorded,        // accepted with no store attached (replay)
};

const char* to_string(DataOutcome o);

struct DataResult {
    DataOutcome outcome = DataOutcome::Denied;
    std::optional<Digest> digest;
    std::optional<Ciphertext> ciphertext;
    std::vector<std::string> bad_holders;
};

/// Data transaction: permission gate first, then write (index the digest and
/// store the ciphertext) or read (return the stored ciphertext when the digest
/// is indexed under the patient and type). `store` may be null during replay.
DataResult apply_data_tx(LedgerState& state, const Transaction& tx, store::ContentStore* store);

struct TxOutcome {
    TxStatus status = TxStatus::Accepted;
    std::optional<DataResult> data;

    bool accepted() const { return status == TxStatus::Accepted; }
};

/// Full pipeline for one transaction: admission checks, then the kind-specific
/// transition. Rejected transactions leave the state untouched.
TxOutcome apply_tx(LedgerState& state, const Transaction& tx, store::ContentStore* store,
                   bool verify_signature = true);

/// Accepted Access/Data events touching `patient`, in chain order.
std::vector<AuditEvent> audit_trail(const LedgerState& state, const PublicKey& patient);

// ---------------------------------------------------------------------------
// Blocks and chains
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxBlockTxs = 64;

struct BlockHeader {
    std::uint64_t height = 0;
    Digest prev_hash{};
    Digest tx_root{};
    std::uint64_t timestamp = 0;
    std::uint32_t proposer = 0;

    Bytes encode() const;
    Digest hash() const { return crypto::hash(encode()); }

    bool operator==(const BlockHeader&) const = default;
};

struct Block {
    BlockHeader header;
    std::vector<Transaction> txs;

    Digest hash() const { return header.hash(); }
    /// header | u32 count | var tx ... (tx = canonical encoding + signature)
    Bytes encode() const;
    static Block decode(ByteView bytes);

    bool operator==(const Block&) const = default;
};

/// hash over the concatenated encode_tx() of every transaction.
Digest compute_tx_root(std::span<const Transaction> txs);
Block make_block(const ChainTip& tip, std::uint64_t timestamp, std::uint32_t proposer, std::vector<Transaction> txs);

/// True iff the block extends `tip`, its tx_root matches, it holds at most
/// kMaxBlockTxs transactions, and each transaction is accepted against the
/// state produced by the ones before it.
bool validate_block(const ChainTip& tip, const Block& candidate, const LedgerState& state);

/// Applies an already-validated block and advances the tip.
std::vector<TxOutcome> apply_block(LedgerState& state, const Block& block, store::ContentStore* store);

class ChainError : public std::runtime_error {
public:
    ChainError(std::uint64_t height, const std::string& what)
        : std::runtime_error(what), height_(height) {}
    std::uint64_t height() const { return height_; }

private:
    std::uint64_t height_;
};

/// Rebuilds state from genesis. Throws ChainError naming the first bad height.
LedgerState replay(std::span<const Block> chain);

/// Chain file: per block, a 4-byte big-endian length followed by Block::encode().
Bytes encode_chain(std::span<const Block> chain);
std::vector<Block> decode_chain(ByteView bytes);
void write_chain_file(const std::filesystem::path& path, std::span<const Block> chain);
std::vector<Block> read_chain_file(const std::filesystem::path& path);

}  // namespace medchain::ledger
