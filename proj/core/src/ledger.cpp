#include "medchain/ledger.hpp"

namespace medchain::ledger {

struct Mutator {
    static std::uint64_t next_height(const LedgerState& s) { return s.tip_.height + 1; }

    static void bump_seq(LedgerState& s, const Transaction& tx) { s.seq_tracker_[tx.sender] = tx.seq; }

    static void register_key(LedgerState& s, const Transaction& tx, const RegisterPayload& p) {
        s.directory_.add(identity::DirectoryEntry{p.role, tx.sender, p.profile});
    }

    static void append_policy(LedgerState& s, const AccessPayload& p) {
        auto idx = s.policy_log_.size();
        s.policy_log_.push_back(p);
        s.policy_index_[p.patient_pk.address()].push_back(idx);
        auto staff_addr = p.staff_pk.address();
        if (staff_addr != p.patient_pk.address()) s.policy_index_[staff_addr].push_back(idx);
        s.latest_[{p.patient_pk, p.staff_pk}] = idx;
    }

    static void index_data(LedgerState& s, const DataPayload& p) {
        s.data_index_[{p.patient_pk, p.data_type}].insert(p.content_digest);
    }

    static void audit(LedgerState& s, AuditEvent e) { s.events_.push_back(std::move(e)); }

    static void set_tip(LedgerState& s, ChainTip tip) { s.tip_ = tip; }
};

namespace {

TxStatus check_access(const LedgerState& state, const Transaction& tx, const AccessPayload& p) {
    if (p.patient_pk != p.policy.grantor || p.staff_pk != p.policy.grantee) return TxStatus::InconsistentPolicy;
    if (tx.sender != p.patient_pk) return TxStatus::NotOwner;
    const auto& dir = state.directory();
    if (!dir.is(p.patient_pk, Role::Patient) || !dir.is(p.staff_pk, Role::Staff)) return TxStatus::UnregisteredParty;
    return TxStatus::Accepted;
}

TxStatus check_data(const LedgerState& state, const Transaction& tx, const DataPayload& p) {
    if (!state.directory().is(p.patient_pk, Role::Patient)) return TxStatus::UnregisteredParty;
    if (p.rw == Rw::Write) {
        // Records are written by their owner only; staff retrieve.
        if (tx.sender != p.patient_pk) return TxStatus::Denied;
        if (p.ciphertext && p.ciphertext->digest() != p.content_digest) return TxStatus::BadAttachment;
        return TxStatus::Accepted;
    }
    return policy_check(state, tx.sender, p.data_type, p.patient_pk) ? TxStatus::Accepted : TxStatus::Denied;
}

void encode_key_set(ByteWriter& w, const std::set<std::string>& types) {
    w.u32(static_cast<std::uint32_t>(types.size()));
    for (const auto& t : types) w.var(t);
}

}  // namespace

const char* to_string(TxStatus s) {
    switch (s) {
        case TxStatus::Accepted: return "accepted";
        case TxStatus::BadSignature: return "bad-signature";
        case TxStatus::StaleSeq: return "stale-seq";
        case TxStatus::UnknownSender: return "unknown-sender";
        case TxStatus::AlreadyRegistered: return "already-registered";
        case TxStatus::NotOwner: return "not-owner";
        case TxStatus::InconsistentPolicy: return "inconsistent-policy";
        case TxStatus::UnregisteredParty: return "unregistered-party";
        case TxStatus::Denied: return "denied";
        case TxStatus::BadAttachment: return "bad-attachment";
    }
    return "unknown";
}

const char* to_string(AuditKind k) {
    switch (k) {
        case AuditKind::Grant: return "grant";
        case AuditKind::Revoke: return "revoke";
        case AuditKind::Write: return "write";
        case AuditKind::Read: return "read";
    }
    return "unknown";
}

const char* to_string(DataOutcome o) {
    switch (o) {
        case DataOutcome::Denied: return "denied";
        case DataOutcome::Written: return "written";
        case DataOutcome::Served: return "served";
        case DataOutcome::NotIndexed: return "not-indexed";
        case DataOutcome::IntegrityAlarm: return "integrity-alarm";
        case DataOutcome::Recorded: return "recorded";
    }
    return "unknown";
}

std::optional<std::uint64_t> LedgerState::last_seq(const PublicKey& sender) const {
    auto it = seq_tracker_.find(sender);
    if (it == seq_tracker_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::size_t> LedgerState::policies_for(const Digest& address) const {
    auto it = policy_index_.find(address);
    return it == policy_index_.end() ? std::vector<std::size_t>{} : it->second;
}

const AccessPayload* LedgerState::latest_policy(const PublicKey& patient, const PublicKey& staff) const {
    auto it = latest_.find({patient, staff});
    return it == latest_.end() ? nullptr : &policy_log_[it->second];
}

const std::set<Digest>* LedgerState::data_digests(const PublicKey& patient, const std::string& type) const {
    auto it = data_index_.find({patient, type});
    return it == data_index_.end() ? nullptr : &it->second;
}

std::size_t LedgerState::data_entry_count() const {
    std::size_t n = 0;
    for (const auto& [_, set] : data_index_) n += set.size();
    return n;
}

Bytes LedgerState::encode() const {
    ByteWriter w;
    w.u64(tip_.height).fixed(tip_.hash.bytes);

    w.u32(static_cast<std::uint32_t>(directory_.size()));
    for (const auto& [addr, e] : directory_.entries())
        w.fixed(addr.bytes).u8(static_cast<std::uint8_t>(e.role)).fixed(e.key.bytes).var(e.profile);

    w.u32(static_cast<std::uint32_t>(seq_tracker_.size()));
    for (const auto& [pk, seq] : seq_tracker_) w.fixed(pk.bytes).u64(seq);

    w.u32(static_cast<std::uint32_t>(policy_log_.size()));
    for (const auto& p : policy_log_) {
        w.fixed(p.patient_pk.bytes).fixed(p.staff_pk.bytes);
        encode_key_set(w, p.policy.allowed_types);
    }

    w.u32(static_cast<std::uint32_t>(data_index_.size()));
    for (const auto& [key, digests] : data_index_) {
        w.fixed(key.first.bytes).var(key.second).u32(static_cast<std::uint32_t>(digests.size()));
        for (const auto& d : digests) w.fixed(d.bytes);
    }

    w.u32(static_cast<std::uint32_t>(events_.size()));
    for (const auto& e : events_) {
        w.u64(e.height).u8(static_cast<std::uint8_t>(e.kind)).fixed(e.actor.bytes).fixed(e.patient.bytes);
        w.u8(e.staff ? 1 : 0);
        if (e.staff) w.fixed(e.staff->bytes);
        w.u32(static_cast<std::uint32_t>(e.types.size()));
        for (const auto& t : e.types) w.var(t);
        w.u8(e.digest ? 1 : 0);
        if (e.digest) w.fixed(e.digest->bytes);
    }
    return std::move(w).take();
}

TxStatus check_tx(const LedgerState& state, const Transaction& tx, bool verify_signature) {
    if (verify_signature && !verify_tx_signature(tx)) return TxStatus::BadSignature;

    if (std::holds_alternative<RegisterPayload>(tx.payload)) {
        if (state.directory().find(tx.sender)) return TxStatus::AlreadyRegistered;
        if (tx.seq == 0) return TxStatus::StaleSeq;
        return TxStatus::Accepted;
    }

    if (!state.directory().find(tx.sender)) return TxStatus::UnknownSender;
    auto last = state.last_seq(tx.sender);
    if (last && tx.seq <= *last) return TxStatus::StaleSeq;

    if (const auto* a = std::get_if<AccessPayload>(&tx.payload)) return check_access(state, tx, *a);
    return check_data(state, tx, std::get<DataPayload>(tx.payload));
}

std::uint8_t apply_access_tx(LedgerState& state, const Transaction& tx) {
    const auto* p = std::get_if<AccessPayload>(&tx.payload);
    if (!p || check_access(state, tx, *p) != TxStatus::Accepted) return 0;
    Mutator::append_policy(state, *p);
    Mutator::audit(state, AuditEvent{Mutator::next_height(state),
                                     p->policy.revokes_all() ? AuditKind::Revoke : AuditKind::Grant,
                                     tx.sender,
                                     p->patient_pk,
                                     p->staff_pk,
                                     {p->policy.allowed_types.begin(), p->policy.allowed_types.end()},
                                     std::nullopt});
    return 1;
}

bool policy_check(const LedgerState& state, const PublicKey& requester, const std::string& type,
                  const PublicKey& target_patient) {
    if (requester == target_patient) return true;
    const auto* p = state.latest_policy(target_patient, requester);
    return p && p->policy.allows(type);
}

DataResult apply_data_tx(LedgerState& state, const Transaction& tx, store::ContentStore* store) {
    DataResult out;
    const auto* p = std::get_if<DataPayload>(&tx.payload);
    if (!p || check_data(state, tx, *p) != TxStatus::Accepted) return out;

    AuditEvent ev{Mutator::next_height(state), AuditKind::Write, tx.sender, p->patient_pk, std::nullopt,
                  {p->data_type}, p->content_digest};
    if (tx.sender != p->patient_pk) ev.staff = tx.sender;

    if (p->rw == Rw::Write) {
        if (store && p->ciphertext) store->put(*p->ciphertext);
        Mutator::index_data(state, *p);
        Mutator::audit(state, std::move(ev));
        out.outcome = DataOutcome::Written;
        out.digest = p->content_digest;
        return out;
    }

    ev.kind = AuditKind::Read;
    Mutator::audit(state, std::move(ev));
    out.digest = p->content_digest;
    const auto* digests = state.data_digests(p->patient_pk, p->data_type);
    if (!digests || !digests->count(p->content_digest)) {
        out.outcome = DataOutcome::NotIndexed;
        return out;
    }
    if (!store) {
        out.outcome = DataOutcome::Recorded;
        return out;
    }
    auto read = store->get(p->content_digest);
    out.bad_holders = std::move(read.bad_holders);
    if (read.status == store::ReadStatus::Ok) {
        out.outcome = DataOutcome::Served;
        out.ciphertext = std::move(read.value);
    } else {
        out.outcome = DataOutcome::IntegrityAlarm;
    }
    return out;
}

TxOutcome apply_tx(LedgerState& state, const Transaction& tx, store::ContentStore* store, bool verify_signature) {
    TxOutcome out;
    out.status = check_tx(state, tx, verify_signature);
    if (!out.accepted()) return out;

    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, RegisterPayload>) {
                Mutator::register_key(state, tx, p);
            } else if constexpr (std::is_same_v<P, AccessPayload>) {
                apply_access_tx(state, tx);
            } else {
                out.data = apply_data_tx(state, tx, store);
            }
        },
        tx.payload);
    Mutator::bump_seq(state, tx);
    return out;
}

std::vector<AuditEvent> audit_trail(const LedgerState& state, const PublicKey& patient) {
    std::vector<AuditEvent> out;
    for (const auto& e : state.events())
        if (e.patient == patient) out.push_back(e);
    return out;
}

void advance_tip(LedgerState& state, const ChainTip& tip) {
    Mutator::set_tip(state, tip);
}

}  // namespace medchain::ledger
