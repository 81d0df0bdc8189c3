#pragma once

// On-disk state for the command-line tool: one key file per identity, the
// committed chain, the content store, sealed key envelopes and the network
// configuration shared by every command.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medchain/identity.hpp"
#include "medchain/ledger.hpp"
#include "medchain/sim.hpp"

namespace medchain::cli {

/// Thrown for unreadable or malformed workspace files and arguments.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Identity {
    std::string id;
    ledger::Role role = ledger::Role::Patient;
    std::string profile;
    crypto::SigningKeyPair keys;
    crypto::SymmetricKey self_key;
    std::map<crypto::PublicKey, crypto::SymmetricKey> shared;
    std::vector<crypto::SymmetricKey> retired;
    std::map<crypto::PublicKey, crypto::SymmetricKey> received;

    identity::PatientIdentity as_patient() const;
    identity::StaffIdentity as_staff() const;
};

std::string serialize_identity(const Identity& who);
Identity parse_identity(const std::string& text);

class Workspace {
public:
    explicit Workspace(std::filesystem::path dir, std::optional<std::filesystem::path> config = std::nullopt);

    const std::filesystem::path& dir() const { return dir_; }

    bool has_identity(const std::string& id) const;
    Identity load_identity(const std::string& id) const;
    /// Written with owner-only permissions.
    void save_identity(const Identity& who) const;
    std::vector<std::string> identity_ids() const;

    /// Network settings plus every known identity as a client node.
    sim::SimConfig sim_config(const std::vector<Identity>& extra = {}) const;

    std::vector<ledger::Block> chain() const;
    void save_chain(const std::vector<ledger::Block>& chain) const;
    std::optional<store::ContentStore> content_store() const;
    void save_store(const store::ContentStore& s) const;

    void save_envelope(const std::string& staff_id, const std::string& patient_id,
                       const identity::SecureEnvelope& env) const;
    /// Envelopes waiting for `staff_id`, keyed by sending patient id.
    std::map<std::string, identity::SecureEnvelope> envelopes_for(const std::string& staff_id) const;

private:
    std::filesystem::path key_path(const std::string& id) const;

    std::filesystem::path dir_;
    std::filesystem::path config_;
};

}  // namespace medchain::cli
