#pragma once

// Joining the network: patients and staff generate signing keys, announce
// their public key through a Register transaction, and patients hand each
// chosen staff member a record key inside an ECDH-sealed envelope that travels
// off-ledger.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "medchain/crypto.hpp"
#include "medchain/tx.hpp"

namespace medchain::identity {

using crypto::PublicKey;
using crypto::SigningKeyPair;
using crypto::SymmetricKey;
using ledger::Role;
using ledger::Transaction;

struct PatientIdentity {
    std::string patient_id;
    SigningKeyPair keys;
    /// One record key per staff member; re-sharing replaces the entry.
    std::map<PublicKey, SymmetricKey> shared_keys;
};

struct StaffIdentity {
    std::string staff_id;
    SigningKeyPair keys;
    std::map<PublicKey, SymmetricKey> received_keys;
    std::string profile;
};

struct DirectoryEntry {
    Role role = Role::Patient;
    PublicKey key;
    std::string profile;

    bool operator==(const DirectoryEntry&) const = default;
};

/// Append-only map from hash(public key) to its registration.
class KeyDirectory {
public:
    /// False when the key is already registered under any role.
    bool add(DirectoryEntry entry);

    const DirectoryEntry* find(const PublicKey& key) const;
    const DirectoryEntry* find_by_address(const crypto::Digest& address) const;
    bool is(const PublicKey& key, Role role) const;

    std::size_t size() const { return entries_.size(); }
    const std::map<crypto::Digest, DirectoryEntry>& entries() const { return entries_; }

    bool operator==(const KeyDirectory&) const = default;

private:
    std::map<crypto::Digest, DirectoryEntry> entries_;
};

/// Registration transaction for `keys` (first transaction of the account).
Transaction registration_tx(const SigningKeyPair& keys, Role role, std::string profile, std::uint64_t seq = 1);

struct JoinedPatient {
    PatientIdentity identity;
    Transaction registration;
};

struct JoinedStaff {
    StaffIdentity identity;
    Transaction registration;
};

JoinedPatient join_patient(std::string patient_id, crypto::Rng& rng);
JoinedStaff join_staff(std::string staff_id, std::string profile, crypto::Rng& rng);

struct SecureEnvelope {
    PublicKey sender;
    PublicKey recipient;
    PublicKey ephemeral_public;
    crypto::Ciphertext sealed_key;

    Bytes encode() const;
    static SecureEnvelope decode(ByteView bytes);

    bool operator==(const SecureEnvelope&) const = default;
};

/// Error raised for a share request to a key that is not a registered staff member.
class RecipientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Generates a fresh record key for (patient, staff), stores it in
/// patient.shared_keys (superseding any previous one) and seals it for the
/// staff member. Throws RecipientError unless staff_pk is registered as staff.
SecureEnvelope share_sym_key(PatientIdentity& patient, const PublicKey& staff_pk, const KeyDirectory& directory,
                             crypto::Rng& rng);

/// Unseals an envelope addressed to `staff`, recording the key under the
/// sender. Returns nullopt and leaves `staff` untouched on any failure.
std::optional<SymmetricKey> open_envelope(StaffIdentity& staff, const SecureEnvelope& env);

}  // namespace medchain::identity
