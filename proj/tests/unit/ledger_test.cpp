#include "medchain/ledger.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>

using namespace medchain;
using namespace medchain::crypto;
using namespace medchain::ledger;

namespace {

struct Actor {
    SigningKeyPair keys;
    std::uint64_t seq = 0;

    const PublicKey& pk() const { return keys.public_key; }
    Transaction sign(Payload p) { return make_signed_tx(keys, ++seq, std::move(p)); }
};

struct World {
    Rng rng{2024};
    LedgerState state;
    store::ContentStore store;
    Actor patient{gen_sig_keypair(rng)};
    Actor staff{gen_sig_keypair(rng)};
    Actor other_staff{gen_sig_keypair(rng)};
    SymmetricKey record_key = gen_sym_key(rng);

    World() {
        must(patient.sign(RegisterPayload{Role::Patient, ""}));
        must(staff.sign(RegisterPayload{Role::Staff, "cardiology"}));
        must(other_staff.sign(RegisterPayload{Role::Staff, "radiology"}));
    }

    TxOutcome submit(const Transaction& tx) { return apply_tx(state, tx, &store); }
    TxOutcome must(const Transaction& tx) {
        auto out = submit(tx);
        EXPECT_EQ(out.status, TxStatus::Accepted) << to_string(out.status);
        return out;
    }

    Transaction grant(std::set<std::string> types, Actor* to = nullptr) {
        return patient.sign(make_access_payload(patient.pk(), (to ? to : &staff)->pk(), std::move(types)));
    }
    Ciphertext seal(std::string_view reading, const std::string& type) {
        return encrypt(record_key, as_bytes(reading), record_associated_data(patient.pk(), type), rng);
    }
    Digest write(std::string_view reading, const std::string& type) {
        auto out = must(patient.sign(make_write_payload(patient.pk(), type, seal(reading, type))));
        return *out.data->digest;
    }
};

}  // namespace

TEST(AccessTx, PatientGrantIsAcceptedAndRetrievable) {
    World w;
    auto tx = w.grant({"body temperature", "blood pressure"});
    EXPECT_EQ(check_tx(w.state, tx), TxStatus::Accepted);
    EXPECT_EQ(apply_access_tx(w.state, tx), 1);
    const auto* p = w.state.latest_policy(w.patient.pk(), w.staff.pk());
    ASSERT_NE(p, nullptr);
    EXPECT_EQ(p->policy.allowed_types, (std::set<std::string>{"blood pressure", "body temperature"}));
    EXPECT_EQ(w.state.policies_for(w.patient.pk().address()), std::vector<std::size_t>{0});
    EXPECT_EQ(w.state.policies_for(w.staff.pk().address()), std::vector<std::size_t>{0});
}

TEST(AccessTx, StaffCannotGrantItself) {
    World w;
    auto tx = w.staff.sign(make_access_payload(w.patient.pk(), w.staff.pk(), {"heart rate"}));
    auto before = w.state.state_digest();
    EXPECT_EQ(apply_access_tx(w.state, tx), 0);
    EXPECT_EQ(w.state.state_digest(), before);
    EXPECT_EQ(w.submit(tx).status, TxStatus::NotOwner);
}

TEST(AccessTx, UnregisteredPartiesAndInconsistentPayloads) {
    World w;
    auto stranger = gen_sig_keypair(w.rng);
    EXPECT_EQ(w.submit(w.patient.sign(make_access_payload(w.patient.pk(), stranger.public_key, {"x"}))).status,
              TxStatus::UnregisteredParty);
    auto p = make_access_payload(w.patient.pk(), w.staff.pk(), {"x"});
    p.policy.grantee = w.other_staff.pk();
    EXPECT_EQ(w.submit(w.patient.sign(p)).status, TxStatus::InconsistentPolicy);
    // A patient may not name another patient as grantee.
    Actor second{gen_sig_keypair(w.rng)};
    w.must(second.sign(RegisterPayload{Role::Patient, ""}));
    EXPECT_EQ(w.submit(w.patient.sign(make_access_payload(w.patient.pk(), second.pk(), {"x"}))).status,
              TxStatus::UnregisteredParty);
}

TEST(AccessTx, EmptySetRevokesEverything) {
    World w;
    w.must(w.grant({"body temperature", "blood pressure"}));
    EXPECT_TRUE(policy_check(w.state, w.staff.pk(), "blood pressure", w.patient.pk()));
    w.must(w.grant({}));
    for (const auto* t : {"body temperature", "blood pressure", "heart rate", ""})
        EXPECT_FALSE(policy_check(w.state, w.staff.pk(), t, w.patient.pk())) << t;
    EXPECT_EQ(w.state.policy_log().size(), 2u);
}

TEST(PolicyCheck, Examples) {
    World w;
    w.must(w.grant({"body temperature", "blood pressure"}));
    EXPECT_TRUE(policy_check(w.state, w.patient.pk(), "heart rate", w.patient.pk()));
    EXPECT_TRUE(policy_check(w.state, w.staff.pk(), "blood pressure", w.patient.pk()));
    EXPECT_FALSE(policy_check(w.state, w.staff.pk(), "heart rate", w.patient.pk()));
    EXPECT_FALSE(policy_check(w.state, w.other_staff.pk(), "blood pressure", w.patient.pk()));
    EXPECT_FALSE(policy_check(LedgerState{}, w.staff.pk(), "blood pressure", w.patient.pk()));
}

TEST(PolicyCheck, LatestPolicyWins) {
    World w;
    w.must(w.grant({"a", "b"}));
    w.must(w.grant({"c"}));
    EXPECT_FALSE(policy_check(w.state, w.staff.pk(), "a", w.patient.pk()));
    EXPECT_TRUE(policy_check(w.state, w.staff.pk(), "c", w.patient.pk()));
}

TEST(DataTx, AuthorizedWriteThenReadRoundTrips) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto c = w.seal("120/80", "blood pressure");
    auto out = w.must(w.patient.sign(make_write_payload(w.patient.pk(), "blood pressure", c)));
    ASSERT_TRUE(out.data);
    EXPECT_EQ(out.data->outcome, DataOutcome::Written);
    EXPECT_EQ(*out.data->digest, hash(c.wire()));
    EXPECT_EQ(*w.store.get(c.digest()).value, c);

    auto read = w.must(w.staff.sign(make_read_payload(w.patient.pk(), "blood pressure", c.digest())));
    ASSERT_EQ(read.data->outcome, DataOutcome::Served);
    EXPECT_EQ(*read.data->ciphertext, c);
    auto plain = decrypt(w.record_key, *read.data->ciphertext, record_associated_data(w.patient.pk(), "blood pressure"));
    ASSERT_TRUE(plain);
    EXPECT_EQ(std::string(plain->begin(), plain->end()), "120/80");
}

TEST(DataTx, UnauthorizedReadIsEmptyAndLeavesStateAlone) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto d = w.write("71", "heart rate");
    auto tx = w.staff.sign(make_read_payload(w.patient.pk(), "heart rate", d));
    auto before = w.state.state_digest();
    auto direct = apply_data_tx(w.state, tx, &w.store);
    EXPECT_EQ(direct.outcome, DataOutcome::Denied);
    EXPECT_FALSE(direct.ciphertext);
    EXPECT_EQ(w.state.state_digest(), before);
    EXPECT_EQ(w.submit(tx).status, TxStatus::Denied);
}

TEST(DataTx, ReadOfUnindexedDigestReturnsEmpty) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto d = w.write("120/80", "blood pressure");
    // Digest exists under another type label only.
    auto out = w.must(w.patient.sign(make_read_payload(w.patient.pk(), "heart rate", d)));
    EXPECT_EQ(out.data->outcome, DataOutcome::NotIndexed);
    EXPECT_FALSE(out.data->ciphertext);
}

TEST(DataTx, IndexedButMissingOrTamperedRaisesAlarm) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto d = w.write("120/80", "blood pressure");
    w.store.tamper(d, store::ContentStore::kLocal, 2);
    auto out = w.must(w.staff.sign(make_read_payload(w.patient.pk(), "blood pressure", d)));
    EXPECT_EQ(out.data->outcome, DataOutcome::IntegrityAlarm);
    EXPECT_FALSE(out.data->ciphertext);
    EXPECT_EQ(out.data->bad_holders, std::vector<std::string>{store::ContentStore::kLocal});

    auto d2 = w.write("130/85", "blood pressure");
    w.store.erase(d2, store::ContentStore::kLocal);
    EXPECT_EQ(w.must(w.staff.sign(make_read_payload(w.patient.pk(), "blood pressure", d2))).data->outcome,
              DataOutcome::IntegrityAlarm);
}

TEST(DataTx, StaffWritesAndMismatchedAttachmentsAreRejected) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto c = w.seal("x", "blood pressure");
    EXPECT_EQ(w.submit(w.staff.sign(make_write_payload(w.patient.pk(), "blood pressure", c))).status, TxStatus::Denied);
    auto p = make_write_payload(w.patient.pk(), "blood pressure", c);
    p.content_digest.bytes[0] ^= 1;
    EXPECT_EQ(w.submit(w.patient.sign(p)).status, TxStatus::BadAttachment);
    EXPECT_EQ(w.state.data_entry_count(), 0u);
}

TEST(TxChecks, SignatureSeqAndRegistration) {
    World w;
    auto tx = w.grant({"a"});
    auto forged = tx;
    forged.signature.s[31] ^= 1;
    EXPECT_EQ(check_tx(w.state, forged), TxStatus::BadSignature);
    w.must(tx);
    EXPECT_EQ(w.submit(tx).status, TxStatus::StaleSeq);
    auto stranger = gen_sig_keypair(w.rng);
    EXPECT_EQ(w.submit(make_signed_tx(stranger, 1, make_read_payload(w.patient.pk(), "a", {}))).status,
              TxStatus::UnknownSender);
    EXPECT_EQ(w.submit(w.patient.sign(RegisterPayload{Role::Staff, "again"})).status, TxStatus::AlreadyRegistered);
}

TEST(Audit, GrantWriteReadRevokeInOrder) {
    World w;
    w.must(w.grant({"blood pressure"}));
    auto d = w.write("120/80", "blood pressure");
    w.must(w.staff.sign(make_read_payload(w.patient.pk(), "blood pressure", d)));
    w.must(w.grant({}));
    auto trail = audit_trail(w.state, w.patient.pk());
    ASSERT_EQ(trail.size(), 4u);
    EXPECT_EQ(trail[0].kind, AuditKind::Grant);
    EXPECT_EQ(trail[1].kind, AuditKind::Write);
    EXPECT_EQ(trail[2].kind, AuditKind::Read);
    EXPECT_EQ(trail[2].staff, w.staff.pk());
    EXPECT_EQ(trail[3].kind, AuditKind::Revoke);
    EXPECT_TRUE(audit_trail(w.state, w.staff.pk()).empty());
}

// Brute-force oracle: rescan the whole policy log for the last matching grant.
TEST(PolicyProperty, LatestPolicyMatchesRescanOracle) {
    World w;
    Actor p2{gen_sig_keypair(w.rng)};
    w.must(p2.sign(RegisterPayload{Role::Patient, ""}));
    std::vector<Actor*> patients{&w.patient, &p2};
    std::vector<Actor*> staff{&w.staff, &w.other_staff};
    const std::vector<std::string> types{"body temperature", "blood pressure", "heart rate", "glucose"};
    std::vector<AccessPayload> log;
    std::mt19937_64 gen(7);

    for (int step = 0; step < 400; ++step) {
        auto* p = patients[gen() % 2];
        auto* m = staff[gen() % 2];
        std::set<std::string> allowed;
        for (const auto& t : types)
            if (gen() % 3 == 0) allowed.insert(t);
        auto payload = make_access_payload(p->pk(), m->pk(), allowed);
        w.must(p->sign(payload));
        log.push_back(payload);

        for (auto* q : patients)
            for (auto* s : staff)
                for (const auto& t : types) {
                    bool expected = false;
                    for (const auto& e : log)
                        if (e.patient_pk == q->pk() && e.staff_pk == s->pk()) expected = e.policy.allowed_types.count(t) > 0;
                    ASSERT_EQ(policy_check(w.state, s->pk(), t, q->pk()), expected);
                }
    }
}

TEST(Blocks, WellFormedSuccessorValidates) {
    LedgerState genesis;
    Rng rng(1);
    Actor p{gen_sig_keypair(rng)};
    auto b1 = make_block({}, 1, 0, {p.sign(RegisterPayload{Role::Patient, ""})});
    EXPECT_EQ(b1.header.height, 1u);
    EXPECT_TRUE(b1.header.prev_hash.is_zero());
    EXPECT_TRUE(validate_block(genesis.tip(), b1, genesis));
}

TEST(Blocks, CorruptedSignatureOrBadLinkIsRejected) {
    Rng rng(2);
    Actor p{gen_sig_keypair(rng)}, m{gen_sig_keypair(rng)};
    LedgerState state;
    std::vector<Block> chain;
    auto extend = [&](std::vector<Transaction> txs) {
        auto b = make_block(state.tip(), chain.size() + 1, 0, std::move(txs));
        ASSERT_TRUE(validate_block(state.tip(), b, state));
        apply_block(state, b, nullptr);
        chain.push_back(b);
    };
    extend({p.sign(RegisterPayload{Role::Patient, ""}), m.sign(RegisterPayload{Role::Staff, ""})});
    extend({p.sign(make_access_payload(p.pk(), m.pk(), {"a"}))});

    auto good = make_block(state.tip(), 9, 0, {p.sign(make_access_payload(p.pk(), m.pk(), {"b"}))});
    EXPECT_TRUE(validate_block(state.tip(), good, state));

    auto bad_sig = good;
    bad_sig.txs[0].signature.r[5] ^= 1;
    bad_sig.header.tx_root = compute_tx_root(bad_sig.txs);
    EXPECT_FALSE(validate_block(state.tip(), bad_sig, state));

    auto two_back = good;
    two_back.header.prev_hash = chain[0].hash();
    EXPECT_FALSE(validate_block(state.tip(), two_back, state));

    auto bad_root = good;
    bad_root.header.tx_root.bytes[0] ^= 1;
    EXPECT_FALSE(validate_block(state.tip(), bad_root, state));

    auto bad_height = good;
    bad_height.header.height += 1;
    EXPECT_FALSE(validate_block(state.tip(), bad_height, state));
}

TEST(Blocks, OversizedBlockIsRejected) {
    Rng rng(3);
    std::vector<Transaction> txs;
    for (std::size_t i = 0; i <= kMaxBlockTxs; ++i) {
        Actor a{gen_sig_keypair(rng)};
        txs.push_back(a.sign(RegisterPayload{Role::Patient, ""}));
    }
    LedgerState s;
    auto b = make_block({}, 1, 0, txs);
    EXPECT_FALSE(validate_block(s.tip(), b, s));
    txs.pop_back();
    EXPECT_TRUE(validate_block(s.tip(), make_block({}, 1, 0, txs), s));
}

TEST(Chain, ReplayMatchesLiveStateAndSurvivesFileRoundTrip) {
    Rng rng(4);
    Actor p{gen_sig_keypair(rng)}, m{gen_sig_keypair(rng)};
    SymmetricKey k = gen_sym_key(rng);
    store::ContentStore s;
    LedgerState live;
    std::vector<Block> chain;
    auto commit = [&](std::vector<Transaction> txs) {
        auto b = make_block(live.tip(), chain.size() + 1, 1, std::move(txs));
        ASSERT_TRUE(validate_block(live.tip(), b, live));
        apply_block(live, b, &s);
        chain.push_back(b);
        EXPECT_EQ(replay(chain).state_digest(), live.state_digest());
    };
    commit({p.sign(RegisterPayload{Role::Patient, ""}), m.sign(RegisterPayload{Role::Staff, "gp"})});
    commit({p.sign(make_access_payload(p.pk(), m.pk(), {"heart rate"}))});
    auto c = encrypt(k, as_bytes("72"), record_associated_data(p.pk(), "heart rate"), rng);
    commit({p.sign(make_write_payload(p.pk(), "heart rate", c))});
    commit({m.sign(make_read_payload(p.pk(), "heart rate", c.digest())), p.sign(make_access_payload(p.pk(), m.pk(), {}))});

    EXPECT_EQ(replay(chain), live);
    EXPECT_EQ(audit_trail(replay(chain), p.pk()), audit_trail(live, p.pk()));
    EXPECT_EQ(replay({}), LedgerState{});

    auto path = std::filesystem::temp_directory_path() / "medchain_chain_test.bin";
    write_chain_file(path, chain);
    auto loaded = read_chain_file(path);
    ASSERT_EQ(loaded.size(), chain.size());
    for (std::size_t i = 0; i < chain.size(); ++i) EXPECT_EQ(loaded[i].encode(), chain[i].encode());
    EXPECT_EQ(replay(loaded).state_digest(), live.state_digest());
    std::filesystem::remove(path);
}

TEST(Chain, ReplayReportsFirstBadHeight) {
    Rng rng(5);
    Actor p{gen_sig_keypair(rng)}, m{gen_sig_keypair(rng)};
    LedgerState s;
    std::vector<Block> chain;
    for (auto* a : {&p, &m}) {
        auto b = make_block(s.tip(), 0, 0, {a->sign(RegisterPayload{a == &p ? Role::Patient : Role::Staff, ""})});
        apply_block(s, b, nullptr);
        chain.push_back(b);
    }
    auto b3 = make_block(s.tip(), 0, 0, {p.sign(make_access_payload(p.pk(), m.pk(), {"x"}))});
    chain.push_back(b3);
    chain[1].txs[0].seq += 1;  // breaks signature and tx_root at height 2
    try {
        replay(chain);
        FAIL() << "replay accepted a corrupted chain";
    } catch (const ChainError& e) {
        EXPECT_EQ(e.height(), 2u);
    }
}

TEST(Chain, DecodeRejectsTruncatedFile) {
    Rng rng(6);
    Actor p{gen_sig_keypair(rng)};
    std::vector<Block> chain{make_block({}, 0, 0, {p.sign(RegisterPayload{Role::Patient, ""})})};
    auto bytes = encode_chain(chain);
    bytes.pop_back();
    EXPECT_THROW(decode_chain(bytes), DecodeError);
}
