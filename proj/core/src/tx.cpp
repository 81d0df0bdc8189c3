#include "medchain/tx.hpp"

namespace medchain::ledger {

namespace {

void encode_payload(ByteWriter& w, const RegisterPayload& p) {
    w.u8(static_cast<std::uint8_t>(p.role)).var(p.profile);
}

void encode_payload(ByteWriter& w, const AccessPayload& p) {
    w.fixed(p.patient_pk.bytes).fixed(p.staff_pk.bytes).fixed(p.policy.grantor.bytes).fixed(p.policy.grantee.bytes);
    // std::set iterates in lexicographic order, which is the canonical order.
    w.u32(static_cast<std::uint32_t>(p.policy.allowed_types.size()));
    for (const auto& t : p.policy.allowed_types) w.var(t);
}

void encode_payload(ByteWriter& w, const DataPayload& p) {
    w.fixed(p.patient_pk.bytes).var(p.data_type).u8(static_cast<std::uint8_t>(p.rw)).fixed(p.content_digest.bytes);
}

PublicKey read_key(ByteReader& r) {
    return PublicKey{r.array<PublicKey::kSize>()};
}

Payload decode_payload(TxKind kind, ByteView bytes) {
    ByteReader r(bytes);
    Payload out;
    switch (kind) {
        case TxKind::Register: {
            RegisterPayload p;
            auto role = r.u8();
            if (role > static_cast<std::uint8_t>(Role::Staff)) throw DecodeError("unknown role");
            p.role = static_cast<Role>(role);
            p.profile = r.var_string();
            out = std::move(p);
            break;
        }
        case TxKind::Access: {
            AccessPayload p;
            p.patient_pk = read_key(r);
            p.staff_pk = read_key(r);
            p.policy.grantor = read_key(r);
            p.policy.grantee = read_key(r);
            auto count = r.u32();
            std::string prev;
            for (std::uint32_t i = 0; i < count; ++i) {
                auto t = r.var_string();
                if (i > 0 && !(prev < t)) throw DecodeError("policy types not sorted and unique");
                p.policy.allowed_types.insert(t);
                prev = std::move(t);
            }
            out = std::move(p);
            break;
        }
        case TxKind::Data: {
            DataPayload p;
            p.patient_pk = read_key(r);
            p.data_type = r.var_string();
            auto rw = r.u8();
            if (rw > static_cast<std::uint8_t>(Rw::Read)) throw DecodeError("rw must be 0 or 1");
            p.rw = static_cast<Rw>(rw);
            p.content_digest = Digest{r.array<Digest::kSize>()};
            out = std::move(p);
            break;
        }
    }
    r.expect_done();
    return out;
}

}  // namespace

const char* to_string(TxKind k) {
    switch (k) {
        case TxKind::Register: return "register";
        case TxKind::Access: return "access";
        case TxKind::Data: return "data";
    }
    return "unknown";
}

const char* to_string(Role r) {
    return r == Role::Patient ? "patient" : "staff";
}

const char* to_string(Rw rw) {
    return rw == Rw::Write ? "write" : "read";
}

Bytes canonical_encode(const Transaction& tx) {
    ByteWriter payload;
    std::visit([&](const auto& p) { encode_payload(payload, p); }, tx.payload);
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(tx.kind())).var(ByteView{tx.sender.bytes}).u64(tx.seq).var(payload.bytes());
    return std::move(w).take();
}

Bytes encode_tx(const Transaction& tx) {
    Bytes out = canonical_encode(tx);
    auto sig = tx.signature.encode();
    out.insert(out.end(), sig.begin(), sig.end());
    return out;
}

Transaction decode_tx(ByteView bytes) {
    ByteReader r(bytes);
    Transaction tx;
    auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(TxKind::Data)) throw DecodeError("unknown transaction kind");
    auto sender = r.var();
    if (sender.size() != PublicKey::kSize) throw DecodeError("sender key must be 33 bytes");
    std::copy(sender.begin(), sender.end(), tx.sender.bytes.begin());
    tx.seq = r.u64();
    tx.payload = decode_payload(static_cast<TxKind>(kind), r.var());
    tx.signature = Signature::decode(r.fixed(Signature::kSize));
    r.expect_done();
    return tx;
}

Digest Transaction::id() const {
    return crypto::hash(encode_tx(*this));
}

Transaction make_signed_tx(const crypto::SigningKeyPair& signer, std::uint64_t seq, Payload payload) {
    Transaction tx;
    tx.sender = signer.public_key;
    tx.seq = seq;
    tx.payload = std::move(payload);
    tx.signature = crypto::sign(signer.private_key, canonical_encode(tx));
    return tx;
}

bool verify_tx_signature(const Transaction& tx) {
    return crypto::verify_cached(tx.sender, canonical_encode(tx), tx.signature);
}

AccessPayload make_access_payload(const PublicKey& patient, const PublicKey& staff, std::set<std::string> types) {
    return AccessPayload{patient, staff, Policy{patient, staff, std::move(types)}};
}

DataPayload make_write_payload(const PublicKey& patient, std::string type, Ciphertext c) {
    DataPayload p;
    p.patient_pk = patient;
    p.data_type = std::move(type);
    p.rw = Rw::Write;
    p.content_digest = c.digest();
    p.ciphertext = std::move(c);
    return p;
}

DataPayload make_read_payload(const PublicKey& patient, std::string type, const Digest& digest) {
    DataPayload p;
    p.patient_pk = patient;
    p.data_type = std::move(type);
    p.rw = Rw::Read;
    p.content_digest = digest;
    return p;
}

Bytes record_associated_data(const PublicKey& patient, std::string_view type) {
    ByteWriter w;
    w.var(std::string_view{"medchain/record/v1"}).fixed(patient.bytes).var(type);
    return std::move(w).take();
}

}  // namespace medchain::ledger
