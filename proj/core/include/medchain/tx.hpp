#pragma once

// Signed ledger transactions and their canonical byte encoding.
//
// Canonical layout (all integers big-endian, variable fields prefixed by a
// 4-byte length):
//
//   u8 kind | var sender(33) | u64 seq | var payload
//
//   Register payload: u8 role | var profile
//   Access payload:   patient(33) | staff(33) | grantor(33) | grantee(33) |
//                     u32 count | var type ... (sorted, unique)
//   Data payload:     patient(33) | var type | u8 rw | digest(32)
//
// A write carries its ciphertext as an off-chain attachment; only the
// ciphertext digest enters the signed encoding and the block.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>

#include "medchain/bytes.hpp"
#include "medchain/crypto.hpp"

namespace medchain::ledger {

using crypto::Ciphertext;
using crypto::Digest;
using crypto::PrivateKey;
using crypto::PublicKey;
using crypto::Signature;

enum class TxKind : std::uint8_t { Register = 0, Access = 1, Data = 2 };
enum class Role : std::uint8_t { Patient = 0, Staff = 1 };
enum class Rw : std::uint8_t { Write = 0, Read = 1 };

const char* to_string(TxKind k);
const char* to_string(Role r);
const char* to_string(Rw rw);

struct RegisterPayload {
    Role role = Role::Patient;
    std::string profile;

    bool operator==(const RegisterPayload&) const = default;
};

/// Data-type labels a patient lets one staff member read. Empty revokes everything.
struct Policy {
    PublicKey grantor;
    PublicKey grantee;
    std::set<std::string> allowed_types;

    bool allows(std::string_view type) const { return allowed_types.count(std::string(type)) > 0; }
    bool revokes_all() const { return allowed_types.empty(); }
    bool operator==(const Policy&) const = default;
};

struct AccessPayload {
    PublicKey patient_pk;
    PublicKey staff_pk;
    Policy policy;

    bool operator==(const AccessPayload&) const = default;
};

struct DataPayload {
    PublicKey patient_pk;
    std::string data_type;
    Rw rw = Rw::Write;
    /// Write: hash of the attached ciphertext. Read: the requested digest.
    Digest content_digest;
    /// Present on writes travelling to the ledger; never part of the encoding.
    std::optional<Ciphertext> ciphertext;

    bool operator==(const DataPayload&) const = default;
};

using Payload = std::variant<RegisterPayload, AccessPayload, DataPayload>;

struct Transaction {
    PublicKey sender;
    std::uint64_t seq = 0;
    Payload payload;
    Signature signature;

    TxKind kind() const { return static_cast<TxKind>(payload.index()); }
    /// hash(encode_tx(*this)); identifies the transaction on the network and in blocks.
    Digest id() const;

    bool operator==(const Transaction&) const = default;
};

/// The signed portion: (kind, sender, seq, payload).
Bytes canonical_encode(const Transaction& tx);
/// canonical_encode(tx) followed by the 64-byte signature.
Bytes encode_tx(const Transaction& tx);
/// Strict inverse of encode_tx; rejects non-canonical input with DecodeError.
Transaction decode_tx(ByteView bytes);

Transaction make_signed_tx(const crypto::SigningKeyPair& signer, std::uint64_t seq, Payload payload);
bool verify_tx_signature(const Transaction& tx);

/// Builds an access payload whose policy mirrors (patient, staff).
AccessPayload make_access_payload(const PublicKey& patient, const PublicKey& staff, std::set<std::string> types);
DataPayload make_write_payload(const PublicKey& patient, std::string type, Ciphertext c);
DataPayload make_read_payload(const PublicKey& patient, std::string type, const Digest& digest);

/// Associated data binding a record ciphertext to its data-type label.
Bytes record_associated_data(const PublicKey& patient, std::string_view type);

}  // namespace medchain::ledger
