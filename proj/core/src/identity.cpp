#include "medchain/identity.hpp"

namespace medchain::identity {

namespace {

crypto::SymmetricKey wrapping_key(const std::array<std::uint8_t, 32>& shared_x, const SecureEnvelope& env) {
    ByteWriter w;
    w.var(std::string_view{"medchain/envelope/v1"})
        .fixed(shared_x)
        .fixed(env.ephemeral_public.bytes)
        .fixed(env.recipient.bytes)
        .fixed(env.sender.bytes);
    return crypto::SymmetricKey{crypto::hash(w.bytes()).bytes};
}

Bytes envelope_ad(const SecureEnvelope& env) {
    ByteWriter w;
    w.fixed(env.sender.bytes).fixed(env.recipient.bytes);
    return std::move(w).take();
}

}  // namespace

bool KeyDirectory::add(DirectoryEntry entry) {
    auto address = entry.key.address();
    return entries_.emplace(address, std::move(entry)).second;
}

const DirectoryEntry* KeyDirectory::find(const PublicKey& key) const {
    return find_by_address(key.address());
}

const DirectoryEntry* KeyDirectory::find_by_address(const crypto::Digest& address) const {
    auto it = entries_.find(address);
    return it == entries_.end() ? nullptr : &it->second;
}

bool KeyDirectory::is(const PublicKey& key, Role role) const {
    const auto* e = find(key);
    return e && e->role == role;
}

Transaction registration_tx(const SigningKeyPair& keys, Role role, std::string profile, std::uint64_t seq) {
    return ledger::make_signed_tx(keys, seq, ledger::RegisterPayload{role, std::move(profile)});
}

JoinedPatient join_patient(std::string patient_id, crypto::Rng& rng) {
    PatientIdentity id{std::move(patient_id), crypto::gen_sig_keypair(rng), {}};
    auto tx = registration_tx(id.keys, Role::Patient, "");
    return {std::move(id), std::move(tx)};
}

JoinedStaff join_staff(std::string staff_id, std::string profile, crypto::Rng& rng) {
    StaffIdentity id{std::move(staff_id), crypto::gen_sig_keypair(rng), {}, std::move(profile)};
    auto tx = registration_tx(id.keys, Role::Staff, id.profile);
    return {std::move(id), std::move(tx)};
}

Bytes SecureEnvelope::encode() const {
    ByteWriter w;
    w.fixed(sender.bytes).fixed(recipient.bytes).fixed(ephemeral_public.bytes).var(sealed_key.wire());
    return std::move(w).take();
}

SecureEnvelope SecureEnvelope::decode(ByteView bytes) {
    ByteReader r(bytes);
    SecureEnvelope env;
    env.sender.bytes = r.array<PublicKey::kSize>();
    env.recipient.bytes = r.array<PublicKey::kSize>();
    env.ephemeral_public.bytes = r.array<PublicKey::kSize>();
    auto sealed = crypto::Ciphertext::from_wire(r.var());
    if (!sealed) throw DecodeError("sealed key too short");
    env.sealed_key = std::move(*sealed);
    r.expect_done();
    return env;
}

SecureEnvelope share_sym_key(PatientIdentity& patient, const PublicKey& staff_pk, const KeyDirectory& directory,
                             crypto::Rng& rng) {
    if (!directory.is(staff_pk, Role::Staff))
        throw RecipientError("recipient " + staff_pk.hex() + " is not a registered staff member");

    auto record_key = crypto::gen_sym_key(rng);
    auto ephemeral = crypto::gen_sig_keypair(rng);
    SecureEnvelope env;
    env.sender = patient.keys.public_key;
    env.recipient = staff_pk;
    env.ephemeral_public = ephemeral.public_key;
    auto shared = crypto::ecdh(ephemeral.private_key, staff_pk);
    if (!shared) throw RecipientError("recipient key is not a valid curve point");
    env.sealed_key = crypto::encrypt(wrapping_key(*shared, env), record_key.bytes, envelope_ad(env), rng);

    patient.shared_keys[staff_pk] = record_key;
    return env;
}

std::optional<SymmetricKey> open_envelope(StaffIdentity& staff, const SecureEnvelope& env) {
    if (env.recipient != staff.keys.public_key) return std::nullopt;
    auto shared = crypto::ecdh(staff.keys.private_key, env.ephemeral_public);
    if (!shared) return std::nullopt;
    auto plain = crypto::decrypt(wrapping_key(*shared, env), env.sealed_key, envelope_ad(env));
    if (!plain || plain->size() != SymmetricKey::kSize) return std::nullopt;
    SymmetricKey key;
    std::copy(plain->begin(), plain->end(), key.bytes.begin());
    staff.received_keys[env.sender] = key;
    return key;
}

}  // namespace medchain::identity
