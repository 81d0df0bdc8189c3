#include "medchain/tx.hpp"

#include <gtest/gtest.h>

#include <set>
#include <tuple>

using namespace medchain;
using namespace medchain::crypto;
using namespace medchain::ledger;

namespace {

struct Keys {
    Rng rng{42};
    SigningKeyPair patient = gen_sig_keypair(rng);
    SigningKeyPair staff = gen_sig_keypair(rng);
};

Transaction grant(const Keys& k, std::set<std::string> types, std::uint64_t seq = 2) {
    return make_signed_tx(k.patient, seq, make_access_payload(k.patient.public_key, k.staff.public_key, std::move(types)));
}

}  // namespace

TEST(CanonicalEncode, Deterministic) {
    Keys k;
    auto tx = grant(k, {"blood pressure"});
    EXPECT_EQ(canonical_encode(tx), canonical_encode(tx));
    EXPECT_EQ(tx.id(), tx.id());
}

TEST(CanonicalEncode, SetOrderDoesNotMatter) {
    Keys k;
    std::set<std::string> a, b;
    a.insert("body temperature");
    a.insert("blood pressure");
    b.insert("blood pressure");
    b.insert("body temperature");
    EXPECT_EQ(canonical_encode(grant(k, a)), canonical_encode(grant(k, b)));
}

TEST(CanonicalEncode, LayoutStartsWithKindSenderSeq) {
    Keys k;
    auto tx = grant(k, {}, 7);
    auto enc = canonical_encode(tx);
    ByteReader r(enc);
    EXPECT_EQ(r.u8(), static_cast<std::uint8_t>(TxKind::Access));
    auto sender = r.var();
    EXPECT_TRUE(std::equal(sender.begin(), sender.end(), k.patient.public_key.bytes.begin()));
    EXPECT_EQ(r.u64(), 7u);
    auto payload = r.var();
    EXPECT_EQ(payload.size(), 4 * PublicKey::kSize + 4);
    EXPECT_TRUE(r.done());
}

TEST(CanonicalEncode, SingleFieldPerturbationChangesBytes) {
    Keys k;
    Rng rng(3);
    auto c = encrypt(gen_sym_key(rng), as_bytes("37.5"), {}, rng);
    auto base = make_signed_tx(k.patient, 5, make_write_payload(k.patient.public_key, "body temperature", c));
    auto enc = canonical_encode(base);

    std::vector<Transaction> variants;
    auto v = base;
    v.seq = 6;
    variants.push_back(v);
    v = base;
    v.sender = k.staff.public_key;
    variants.push_back(v);
    v = base;
    std::get<DataPayload>(v.payload).data_type = "body temperaturf";
    variants.push_back(v);
    v = base;
    std::get<DataPayload>(v.payload).rw = Rw::Read;
    variants.push_back(v);
    v = base;
    std::get<DataPayload>(v.payload).content_digest.bytes[31] ^= 1;
    variants.push_back(v);
    v = base;
    std::get<DataPayload>(v.payload).patient_pk = k.staff.public_key;
    variants.push_back(v);
    for (const auto& var : variants) EXPECT_NE(canonical_encode(var), enc);
}

TEST(CanonicalEncode, AttachmentIsNotEncoded) {
    Keys k;
    Rng rng(4);
    auto c = encrypt(gen_sym_key(rng), as_bytes("secret reading"), {}, rng);
    auto tx = make_signed_tx(k.patient, 2, make_write_payload(k.patient.public_key, "heart rate", c));
    auto stripped = tx;
    std::get<DataPayload>(stripped.payload).ciphertext.reset();
    EXPECT_EQ(encode_tx(tx), encode_tx(stripped));
    EXPECT_TRUE(verify_tx_signature(stripped));
}

TEST(CanonicalEncode, InjectiveOverGeneratedCorpus) {
    Keys k;
    // Logical identity of each generated transaction, spelled out independently of the encoder.
    std::set<std::tuple<int, std::uint64_t, std::set<std::string>, int>> logical;
    std::set<Bytes> seen;
    const std::vector<std::string> labels{"", "a", "ab", "b", "ba", "heart rate", "blood pressure"};
    for (std::uint64_t seq = 0; seq < 4; ++seq) {
        for (const auto& l : labels) {
            for (auto rw : {Rw::Write, Rw::Read}) {
                DataPayload p;
                p.patient_pk = k.patient.public_key;
                p.data_type = l;
                p.rw = rw;
                seen.insert(canonical_encode(Transaction{k.patient.public_key, seq, p, {}}));
                logical.insert({0, seq, {l}, static_cast<int>(rw)});
            }
            for (const auto& m : labels) {
                auto p = make_access_payload(k.patient.public_key, k.staff.public_key, {l, m});
                seen.insert(canonical_encode(Transaction{k.patient.public_key, seq, p, {}}));
                logical.insert({1, seq, p.policy.allowed_types, 0});
            }
            seen.insert(canonical_encode(Transaction{k.patient.public_key, seq, RegisterPayload{Role::Staff, l}, {}}));
            logical.insert({2, seq, {l}, 0});
        }
    }
    EXPECT_EQ(seen.size(), logical.size());
}

TEST(TxCodec, RoundTripAllKinds) {
    Keys k;
    std::vector<Transaction> txs{
        make_signed_tx(k.staff, 1, RegisterPayload{Role::Staff, "cardiology, licence 1234"}),
        grant(k, {"blood pressure", "body temperature"}),
        make_signed_tx(k.staff, 2, make_read_payload(k.patient.public_key, "blood pressure", hash(std::string_view{"x"}))),
    };
    for (const auto& tx : txs) {
        auto decoded = decode_tx(encode_tx(tx));
        EXPECT_EQ(decoded, tx);
        EXPECT_TRUE(verify_tx_signature(decoded));
    }
}

TEST(TxCodec, RejectsMalformedInput) {
    Keys k;
    auto enc = encode_tx(grant(k, {"a", "b"}));
    auto truncated = enc;
    truncated.pop_back();
    EXPECT_THROW(decode_tx(truncated), DecodeError);
    auto trailing = enc;
    trailing.push_back(0);
    EXPECT_THROW(decode_tx(trailing), DecodeError);
    auto bad_kind = enc;
    bad_kind[0] = 9;
    EXPECT_THROW(decode_tx(bad_kind), DecodeError);

    // Swap the two sorted labels in place: same length, now out of order.
    auto unsorted = enc;
    auto pos_a = canonical_encode(grant(k, {"a", "b"})).size() - 5 - 5;
    ASSERT_EQ(unsorted[pos_a + 4], 'a');
    std::swap(unsorted[pos_a + 4], unsorted[pos_a + 9]);
    EXPECT_THROW(decode_tx(unsorted), DecodeError);
}

TEST(TxSignature, DetectsTampering) {
    Keys k;
    auto tx = grant(k, {"blood pressure"});
    EXPECT_TRUE(verify_tx_signature(tx));
    auto altered = tx;
    std::get<AccessPayload>(altered.payload).policy.allowed_types.insert("heart rate");
    EXPECT_FALSE(verify_tx_signature(altered));
    auto other = tx;
    other.seq += 1;
    EXPECT_FALSE(verify_tx_signature(other));
}
