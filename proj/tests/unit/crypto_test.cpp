#include "medchain/crypto.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace medchain;
using namespace medchain::crypto;

namespace {

PrivateKey scalar(std::string_view hex) {
    PrivateKey k;
    auto raw = from_hex(hex);
    std::copy(raw.begin(), raw.end(), k.bytes.begin());
    return k;
}

// secp256k1 order minus one.
constexpr std::string_view kOrderMinusOne = "fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364140";

}  // namespace

TEST(Hash, NistVectors) {
    EXPECT_EQ(hash(std::string_view{""}).hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(hash(std::string_view{"abc"}).hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(hash(std::string_view{"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"}).hex(),
              "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Hash, DigestHexParsing) {
    auto d = hash(std::string_view{"x"});
    EXPECT_EQ(Digest::from_hex(d.hex()), d);
    EXPECT_FALSE(Digest::from_hex("abcd").has_value());
    EXPECT_FALSE(Digest::from_hex(std::string(64, 'g')).has_value());
}

TEST(Rng, FixedSeedIsReproducibleAndSeedsDiffer) {
    Rng a(1), b(1), c(2);
    EXPECT_EQ(a.bytes<48>(), b.bytes<48>());
    Rng a2(1);
    EXPECT_NE(a2.bytes<32>(), c.bytes<32>());
}

TEST(Signatures, KeypairGenerationIsDeterministicPerSeed) {
    Rng a(11), b(11), c(12);
    auto ka = gen_sig_keypair(a);
    auto kb = gen_sig_keypair(b);
    auto kc = gen_sig_keypair(c);
    EXPECT_EQ(ka.public_key, kb.public_key);
    EXPECT_NE(ka.public_key, kc.public_key);
    EXPECT_TRUE(is_valid_public_key(ka.public_key));
    EXPECT_TRUE(is_valid_public_key(kc.public_key));
}

TEST(Signatures, DerivesKnownGeneratorEncoding) {
    EXPECT_EQ(derive_public_key(scalar("0000000000000000000000000000000000000000000000000000000000000001")).hex(),
              "0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798");
    EXPECT_EQ(derive_public_key(scalar(kOrderMinusOne)).hex(),
              "0379be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798");
}

// Deterministic-ECDSA vectors for secp256k1 + SHA-256 (low-s form), cross-checked
// against python-ecdsa's sign_deterministic.
struct Rfc6979Case {
    std::string_view key;
    std::string_view message;
    std::string_view r;
    std::string_view s;
};

class Rfc6979Vectors : public ::testing::TestWithParam<Rfc6979Case> {};

TEST_P(Rfc6979Vectors, KnownAnswer) {
    const auto& c = GetParam();
    auto key = scalar(c.key);
    auto sig = sign(key, as_bytes(c.message));
    EXPECT_EQ(to_hex(sig.r), c.r);
    EXPECT_EQ(to_hex(sig.s), c.s);
    EXPECT_TRUE(verify(derive_public_key(key), as_bytes(c.message), sig));
}

INSTANTIATE_TEST_SUITE_P(
    Secp256k1, Rfc6979Vectors,
    ::testing::Values(
        Rfc6979Case{"0000000000000000000000000000000000000000000000000000000000000001", "Satoshi Nakamoto",
                    "934b1ea10a4b3c1757e2b0c017d0b6143ce3c9a7e6a4a49860d7a6ab210ee3d8",
                    "2442ce9d2b916064108014783e923ec36b49743e2ffa1c4496f01a512aafd9e5"},
        Rfc6979Case{"0000000000000000000000000000000000000000000000000000000000000001",
                    "All those moments will be lost in time, like tears in rain. Time to die...",
                    "8600dbd41e348fe5c9465ab92d23e3db8b98b873beecd930736488696438cb6b",
                    "547fe64427496db33bf66019dacbf0039c04199abb0122918601db38a72cfc21"},
        Rfc6979Case{kOrderMinusOne, "Satoshi Nakamoto",
                    "fd567d121db66e382991534ada77a6bd3106f0a1098c231e47993447cd6af2d0",
                    "6b39cd0eb1bc8603e159ef5c20a5c8ad685a45b06ce9bebed3f153d10d93bed5"},
        Rfc6979Case{"f8b8af8ce3c7cca5e300d33939540c10d45ce001b8f252bfbc57ba0342904181", "Alan Turing",
                    "7063ae83e7f62bbb171798131b4a0564b956930092b33b07b395615d9ec7e15c",
                    "58dfcc1e00a35e1572f366ffe34ba0fc47db1e7189759b9fb233c5b05ab388ea"}));

TEST(Signatures, Rfc6979NonceKnownAnswer) {
    auto k = rfc6979_nonce(scalar("0000000000000000000000000000000000000000000000000000000000000001"),
                           as_bytes(std::string_view{"Satoshi Nakamoto"}));
    EXPECT_EQ(to_hex(k), "8f8a276c19f4149656b280621e358cce24f5f52542772691ee69063b74f15d15");
}

TEST(Signatures, DeterministicAndLowS) {
    Rng rng(3);
    auto kp = gen_sig_keypair(rng);
    auto msg = as_bytes(std::string_view{"policy"});
    auto s1 = sign(kp.private_key, msg);
    auto s2 = sign(kp.private_key, msg);
    EXPECT_EQ(s1, s2);
    // s <= (n-1)/2: top byte of the half order is 0x7f.
    EXPECT_LE(s1.s[0], 0x7f);
}

TEST(Signatures, RejectsTamperingAndWrongKey) {
    Rng rng(4);
    auto kp = gen_sig_keypair(rng);
    auto other = gen_sig_keypair(rng);
    Bytes msg{1, 2, 3, 4};
    auto sig = sign(kp.private_key, msg);
    EXPECT_TRUE(verify(kp.public_key, msg, sig));
    Bytes flipped = msg;
    flipped[2] ^= 0x01;
    EXPECT_FALSE(verify(kp.public_key, flipped, sig));
    EXPECT_FALSE(verify(other.public_key, msg, sig));
    EXPECT_FALSE(verify(kp.public_key, msg, sign(other.private_key, msg)));
}

TEST(Signatures, HighSFormIsRejected) {
    // n - s of a valid low-s signature is the other valid ECDSA solution; the
    // canonical-form rule must reject it.
    auto key = scalar("0000000000000000000000000000000000000000000000000000000000000001");
    auto msg = as_bytes(std::string_view{"Satoshi Nakamoto"});
    auto sig = sign(key, msg);
    // n - 0x2442ce9d...d9e5
    sig.s = scalar("dbbd3162d46e9f9bef7feb87c16dc13b4f6568a87f4e83f728e2443ba586675c").bytes;
    EXPECT_FALSE(verify(derive_public_key(key), msg, sig));
}

TEST(Signatures, MalformedInputsReturnFalse) {
    Rng rng(5);
    auto kp = gen_sig_keypair(rng);
    Bytes msg{9};
    auto sig = sign(kp.private_key, msg);

    PublicKey bad_prefix = kp.public_key;
    bad_prefix.bytes[0] = 0x05;
    EXPECT_FALSE(verify(bad_prefix, msg, sig));

    PublicKey off_curve{};
    off_curve.bytes[0] = 0x02;
    off_curve.bytes.back() = 0x07;  // x = 7: 343 + 7 = 350 is not a square mod p
    EXPECT_FALSE(is_valid_public_key(off_curve));
    EXPECT_FALSE(verify(off_curve, msg, sig));

    Signature zero{};
    EXPECT_FALSE(verify(kp.public_key, msg, zero));
}

TEST(Signatures, InvalidScalarRejected) {
    PrivateKey zero{};
    EXPECT_THROW(sign(zero, Bytes{1}), std::invalid_argument);
    PrivateKey too_big;
    too_big.bytes.fill(0xff);
    EXPECT_THROW(sign(too_big, Bytes{1}), std::invalid_argument);
    EXPECT_FALSE(is_valid_private_key(too_big));
}

TEST(Ecdh, BothSidesAgree) {
    Rng rng(6);
    auto a = gen_sig_keypair(rng);
    auto b = gen_sig_keypair(rng);
    auto ab = ecdh(a.private_key, b.public_key);
    auto ba = ecdh(b.private_key, a.public_key);
    ASSERT_TRUE(ab && ba);
    EXPECT_EQ(*ab, *ba);
}

// AES-256-GCM vectors from the GCM submission (test cases 13, 14, 16).
TEST(Aead, GcmKnownAnswers) {
    SymmetricKey zero_key{};
    std::array<std::uint8_t, 12> zero_iv{};

    auto c13 = encrypt_with_nonce(zero_key, zero_iv, {}, {});
    EXPECT_TRUE(c13.body.empty());
    EXPECT_EQ(to_hex(c13.tag), "530f8afbc74536b9a963b4f1c4cb738b");

    auto c14 = encrypt_with_nonce(zero_key, zero_iv, Bytes(16, 0), {});
    EXPECT_EQ(to_hex(c14.body), "cea7403d4d606b6e074ec5d3baf39d18");
    EXPECT_EQ(to_hex(c14.tag), "d0d1c8a799996bf0265b98b5d48ab919");

    SymmetricKey key;
    auto raw = from_hex("feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308");
    std::copy(raw.begin(), raw.end(), key.bytes.begin());
    std::array<std::uint8_t, 12> iv{};
    auto iv_raw = from_hex("cafebabefacedbaddecaf888");
    std::copy(iv_raw.begin(), iv_raw.end(), iv.begin());
    auto pt = from_hex(
        "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39");
    auto ad = from_hex("feedfacedeadbeeffeedfacedeadbeefabaddad2");
    auto c16 = encrypt_with_nonce(key, iv, pt, ad);
    EXPECT_EQ(to_hex(c16.body),
              "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662");
    EXPECT_EQ(to_hex(c16.tag), "76fc6ece0f4e1768cddf8853bb2d551b");
    EXPECT_EQ(decrypt(key, c16, ad), pt);
}

TEST(Aead, RoundTripAndFailureModes) {
    Rng rng(7);
    auto key = gen_sym_key(rng);
    auto wrong = gen_sym_key(rng);
    Bytes msg{'3', '6', '.', '6'};
    Bytes ad{'t'};
    auto c = encrypt(key, msg, ad, rng);
    EXPECT_EQ(decrypt(key, c, ad), msg);
    EXPECT_FALSE(decrypt(wrong, c, ad).has_value());
    EXPECT_FALSE(decrypt(key, c, Bytes{'u'}).has_value());

    auto c2 = encrypt(key, msg, ad, rng);
    EXPECT_NE(c.nonce, c2.nonce);
}

TEST(Aead, WireLayoutIsNonceBodyTag) {
    Rng rng(8);
    auto key = gen_sym_key(rng);
    auto c = encrypt(key, Bytes{1, 2, 3}, {}, rng);
    auto wire = c.wire();
    ASSERT_EQ(wire.size(), 12u + 3u + 16u);
    EXPECT_TRUE(std::equal(c.nonce.begin(), c.nonce.end(), wire.begin()));
    EXPECT_TRUE(std::equal(c.tag.begin(), c.tag.end(), wire.end() - 16));
    EXPECT_EQ(Ciphertext::from_wire(wire), c);
    EXPECT_FALSE(Ciphertext::from_wire(Bytes(27, 0)).has_value());
    EXPECT_EQ(c.digest(), hash(wire));
}

TEST(SymmetricKeys, SeededGeneration) {
    Rng a(21), b(21), c(22);
    EXPECT_EQ(gen_sym_key(a), gen_sym_key(b));
    EXPECT_NE(gen_sym_key(a), gen_sym_key(c));
    EXPECT_EQ(SymmetricKey::kSize, 32u);
}
