#include "medchain/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <stdexcept>

namespace medchain::crypto {

namespace {

struct BnFree {
    void operator()(BIGNUM* b) const { BN_clear_free(b); }
};
struct CtxFree {
    void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
struct PointFree {
    void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

using BnPtr = std::unique_ptr<BIGNUM, BnFree>;
using CtxPtr = std::unique_ptr<BN_CTX, CtxFree>;
using PointPtr = std::unique_ptr<EC_POINT, PointFree>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

BnPtr new_bn() {
    BnPtr b{BN_new()};
    if (!b) throw std::bad_alloc();
    return b;
}

CtxPtr new_ctx() {
    CtxPtr c{BN_CTX_new()};
    if (!c) throw std::bad_alloc();
    return c;
}

BnPtr bn_from(ByteView bytes) {
    BnPtr b{BN_bin2bn(bytes.data(), static_cast<int>(bytes.size()), nullptr)};
    if (!b) throw std::bad_alloc();
    return b;
}

std::array<std::uint8_t, 32> bn_to32(const BIGNUM* b) {
    std::array<std::uint8_t, 32> out{};
    if (BN_bn2binpad(b, out.data(), 32) != 32) throw std::logic_error("scalar wider than 32 bytes");
    return out;
}

struct Curve {
    EC_GROUP* group = nullptr;
    BIGNUM* order = nullptr;
    BIGNUM* half_order = nullptr;
};

const Curve& curve() {
    static const Curve c = [] {
        Curve out;
        out.group = EC_GROUP_new_by_curve_name(NID_secp256k1);
        if (!out.group) throw std::runtime_error("secp256k1 unavailable in OpenSSL");
        out.order = BN_new();
        out.half_order = BN_new();
        EC_GROUP_get_order(out.group, out.order, nullptr);
        BN_rshift1(out.half_order, out.order);
        return out;
    }();
    return c;
}

bool scalar_in_range(const BIGNUM* k) {
    return !BN_is_zero(k) && !BN_is_negative(k) && BN_cmp(k, curve().order) < 0;
}

PointPtr parse_point(const PublicKey& key, BN_CTX* ctx) {
    PointPtr p{EC_POINT_new(curve().group)};
    if (!p) throw std::bad_alloc();
    if (key.bytes[0] != 0x02 && key.bytes[0] != 0x03) return nullptr;
    if (EC_POINT_oct2point(curve().group, p.get(), key.bytes.data(), key.bytes.size(), ctx) != 1) return nullptr;
    if (EC_POINT_is_at_infinity(curve().group, p.get())) return nullptr;
    if (EC_POINT_is_on_curve(curve().group, p.get(), ctx) != 1) return nullptr;
    return p;
}

using Block32 = std::array<std::uint8_t, 32>;

Block32 hmac_sha256(const Block32& key, ByteView data) {
    Block32 out{};
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), out.data(), &len))
        throw std::runtime_error("HMAC-SHA256 failed");
    return out;
}

// RFC 6979 section 3.2 with qlen = hlen = 256, so bits2int is the identity.
class NonceGenerator {
public:
    NonceGenerator(const Block32& x, const Block32& h1_mod_q) {
        v_.fill(0x01);
        k_.fill(0x00);
        step(0x00, x, h1_mod_q);
        step(0x01, x, h1_mod_q);
    }

    Block32 next() {
        if (started_) {
            Bytes in(v_.begin(), v_.end());
            in.push_back(0x00);
            k_ = hmac_sha256(k_, in);
            v_ = hmac_sha256(k_, v_);
        }
        started_ = true;
        v_ = hmac_sha256(k_, v_);
        return v_;
    }

private:
    void step(std::uint8_t tag, const Block32& x, const Block32& h) {
        Bytes in(v_.begin(), v_.end());
        in.push_back(tag);
        in.insert(in.end(), x.begin(), x.end());
        in.insert(in.end(), h.begin(), h.end());
        k_ = hmac_sha256(k_, in);
        v_ = hmac_sha256(k_, v_);
    }

    Block32 v_{};
    Block32 k_{};
    bool started_ = false;
};

Block32 reduce_mod_order(const Digest& h, BN_CTX* ctx) {
    auto z = bn_from(h.bytes);
    auto r = new_bn();
    BN_nnmod(r.get(), z.get(), curve().order, ctx);
    return bn_to32(r.get());
}

}  // namespace

std::optional<Digest> Digest::from_hex(std::string_view hex) {
    if (hex.size() != kSize * 2) return std::nullopt;
    try {
        auto raw = medchain::from_hex(hex);
        Digest d;
        std::copy(raw.begin(), raw.end(), d.bytes.begin());
        return d;
    } catch (const DecodeError&) {
        return std::nullopt;
    }
}

bool Digest::is_zero() const {
    for (auto b : bytes)
        if (b != 0) return false;
    return true;
}

Digest hash(ByteView data) {
    Digest d;
    SHA256(data.data(), data.size(), d.bytes.data());
    return d;
}

Rng::Rng(std::uint64_t seed) {
    ByteWriter w;
    w.var(std::string_view{"medchain/rng/seed"}).u64(seed);
    key_ = hash(w.bytes()).bytes;
}

Rng::Rng(ByteView seed_material) {
    ByteWriter w;
    w.var(std::string_view{"medchain/rng/material"}).var(seed_material);
    key_ = hash(w.bytes()).bytes;
}

Rng Rng::from_system() {
    std::array<std::uint8_t, 32> seed{};
    if (RAND_bytes(seed.data(), static_cast<int>(seed.size())) != 1)
        throw std::runtime_error("system randomness unavailable");
    return Rng(ByteView{seed.data(), seed.size()});
}

void Rng::refill() {
    ByteWriter w;
    w.fixed(key_).u64(counter_++);
    block_ = hash(w.bytes()).bytes;
    used_ = 0;
}

void Rng::fill(std::span<std::uint8_t> out) {
    for (auto& b : out) {
        if (used_ == block_.size()) refill();
        b = block_[used_++];
    }
}

std::uint64_t Rng::next_u64() {
    std::array<std::uint8_t, 8> raw{};
    fill(raw);
    std::uint64_t v = 0;
    for (auto b : raw) v = (v << 8) | b;
    return v;
}

std::array<std::uint8_t, Signature::kSize> Signature::encode() const {
    std::array<std::uint8_t, kSize> out{};
    std::copy(r.begin(), r.end(), out.begin());
    std::copy(s.begin(), s.end(), out.begin() + 32);
    return out;
}

Signature Signature::decode(ByteView bytes) {
    if (bytes.size() != kSize) throw DecodeError("signature must be 64 bytes");
    Signature sig;
    std::copy(bytes.begin(), bytes.begin() + 32, sig.r.begin());
    std::copy(bytes.begin() + 32, bytes.end(), sig.s.begin());
    return sig;
}

bool is_valid_private_key(const PrivateKey& key) {
    auto d = bn_from(key.bytes);
    return scalar_in_range(d.get());
}

bool is_valid_public_key(const PublicKey& key) {
    auto ctx = new_ctx();
    return parse_point(key, ctx.get()) != nullptr;
}

PublicKey derive_public_key(const PrivateKey& key) {
    auto d = bn_from(key.bytes);
    if (!scalar_in_range(d.get())) throw std::invalid_argument("private scalar out of range");
    auto ctx = new_ctx();
    PointPtr q{EC_POINT_new(curve().group)};
    if (!q || EC_POINT_mul(curve().group, q.get(), d.get(), nullptr, nullptr, ctx.get()) != 1)
        throw std::runtime_error("scalar multiplication failed");
    PublicKey pub;
    if (EC_POINT_point2oct(curve().group, q.get(), POINT_CONVERSION_COMPRESSED, pub.bytes.data(), pub.bytes.size(),
                           ctx.get()) != PublicKey::kSize)
        throw std::runtime_error("point encoding failed");
    return pub;
}

SigningKeyPair gen_sig_keypair(Rng& rng) {
    for (;;) {
        PrivateKey priv;
        rng.fill(priv.bytes);
        if (is_valid_private_key(priv)) return {derive_public_key(priv), priv};
    }
}

std::array<std::uint8_t, 32> rfc6979_nonce(const PrivateKey& key, ByteView message) {
    auto ctx = new_ctx();
    NonceGenerator gen(key.bytes, reduce_mod_order(hash(message), ctx.get()));
    for (;;) {
        auto candidate = gen.next();
        auto k = bn_from(candidate);
        if (scalar_in_range(k.get())) return candidate;
    }
}

Signature sign(const PrivateKey& key, ByteView message) {
    const auto& c = curve();
    auto d = bn_from(key.bytes);
    if (!scalar_in_range(d.get())) throw std::invalid_argument("private scalar out of range");
    auto ctx = new_ctx();
    const Digest h = hash(message);
    auto z = bn_from(h.bytes);
    NonceGenerator gen(key.bytes, reduce_mod_order(h, ctx.get()));

    PointPtr big_r{EC_POINT_new(c.group)};
    auto rx = new_bn();
    auto r = new_bn();
    auto s = new_bn();
    auto kinv = new_bn();
    auto tmp = new_bn();
    for (;;) {
        auto k = bn_from(gen.next());
        if (!scalar_in_range(k.get())) continue;
        if (EC_POINT_mul(c.group, big_r.get(), k.get(), nullptr, nullptr, ctx.get()) != 1)
            throw std::runtime_error("scalar multiplication failed");
        EC_POINT_get_affine_coordinates(c.group, big_r.get(), rx.get(), nullptr, ctx.get());
        BN_nnmod(r.get(), rx.get(), c.order, ctx.get());
        if (BN_is_zero(r.get())) continue;
        // s = k^-1 (z + r d) mod n
        BN_mod_mul(tmp.get(), r.get(), d.get(), c.order, ctx.get());
        BN_mod_add(tmp.get(), tmp.get(), z.get(), c.order, ctx.get());
        if (!BN_mod_inverse(kinv.get(), k.get(), c.order, ctx.get()))
            throw std::runtime_error("nonce inversion failed");
        BN_mod_mul(s.get(), kinv.get(), tmp.get(), c.order, ctx.get());
        if (BN_is_zero(s.get())) continue;
        if (BN_cmp(s.get(), c.half_order) > 0) BN_sub(s.get(), c.order, s.get());
        break;
    }
    Signature sig;
    sig.r = bn_to32(r.get());
    sig.s = bn_to32(s.get());
    return sig;
}

bool verify(const PublicKey& key, ByteView message, const Signature& sig) {
    try {
        const auto& c = curve();
        auto ctx = new_ctx();
        auto q = parse_point(key, ctx.get());
        if (!q) return false;
        auto r = bn_from(sig.r);
        auto s = bn_from(sig.s);
        if (!scalar_in_range(r.get()) || !scalar_in_range(s.get())) return false;
        if (BN_cmp(s.get(), c.half_order) > 0) return false;

        auto z = bn_from(hash(message).bytes);
        auto w = new_bn();
        auto u1 = new_bn();
        auto u2 = new_bn();
        if (!BN_mod_inverse(w.get(), s.get(), c.order, ctx.get())) return false;
        BN_mod_mul(u1.get(), z.get(), w.get(), c.order, ctx.get());
        BN_mod_mul(u2.get(), r.get(), w.get(), c.order, ctx.get());

        PointPtr big_r{EC_POINT_new(c.group)};
        if (EC_POINT_mul(c.group, big_r.get(), u1.get(), q.get(), u2.get(), ctx.get()) != 1) return false;
        if (EC_POINT_is_at_infinity(c.group, big_r.get())) return false;
        auto x = new_bn();
        EC_POINT_get_affine_coordinates(c.group, big_r.get(), x.get(), nullptr, ctx.get());
        BN_nnmod(x.get(), x.get(), c.order, ctx.get());
        return BN_cmp(x.get(), r.get()) == 0;
    } catch (const std::exception&) {
        return false;
    }
}

bool verify_cached(const PublicKey& key, ByteView message, const Signature& sig) {
    static constexpr std::size_t kShards = 16;
    static constexpr std::size_t kShardCapacity = 1 << 16;
    struct Shard {
        std::mutex mu;
        std::unordered_map<Digest, bool> results;
    };
    static Shard shards[kShards];

    ByteWriter w;
    w.fixed(key.bytes).fixed(hash(message).bytes).fixed(sig.encode());
    const Digest memo_key = hash(w.bytes());
    auto& shard = shards[memo_key.bytes[31] % kShards];
    {
        std::lock_guard lock(shard.mu);
        if (auto it = shard.results.find(memo_key); it != shard.results.end()) return it->second;
    }
    const bool ok = verify(key, message, sig);
    std::lock_guard lock(shard.mu);
    if (shard.results.size() >= kShardCapacity) shard.results.clear();
    shard.results.emplace(memo_key, ok);
    return ok;
}

std::optional<std::array<std::uint8_t, 32>> ecdh(const PrivateKey& priv, const PublicKey& pub) {
    const auto& c = curve();
    auto d = bn_from(priv.bytes);
    if (!scalar_in_range(d.get())) return std::nullopt;
    auto ctx = new_ctx();
    auto q = parse_point(pub, ctx.get());
    if (!q) return std::nullopt;
    PointPtr shared{EC_POINT_new(c.group)};
    if (EC_POINT_mul(c.group, shared.get(), nullptr, q.get(), d.get(), ctx.get()) != 1) return std::nullopt;
    if (EC_POINT_is_at_infinity(c.group, shared.get())) return std::nullopt;
    auto x = new_bn();
    EC_POINT_get_affine_coordinates(c.group, shared.get(), x.get(), nullptr, ctx.get());
    return bn_to32(x.get());
}

SymmetricKey gen_sym_key(Rng& rng) {
    SymmetricKey k;
    rng.fill(k.bytes);
    return k;
}

Bytes Ciphertext::wire() const {
    Bytes out;
    out.reserve(kNonceSize + body.size() + kTagSize);
    out.insert(out.end(), nonce.begin(), nonce.end());
    out.insert(out.end(), body.begin(), body.end());
    out.insert(out.end(), tag.begin(), tag.end());
    return out;
}

std::optional<Ciphertext> Ciphertext::from_wire(ByteView wire) {
    if (wire.size() < kNonceSize + kTagSize) return std::nullopt;
    Ciphertext c;
    std::copy(wire.begin(), wire.begin() + kNonceSize, c.nonce.begin());
    c.body.assign(wire.begin() + kNonceSize, wire.end() - kTagSize);
    std::copy(wire.end() - kTagSize, wire.end(), c.tag.begin());
    return c;
}

Ciphertext encrypt(const SymmetricKey& key, ByteView plaintext, ByteView associated_data, Rng& rng) {
    return encrypt_with_nonce(key, rng.bytes<Ciphertext::kNonceSize>(), plaintext, associated_data);
}

Ciphertext encrypt_with_nonce(const SymmetricKey& key,
                              const std::array<std::uint8_t, Ciphertext::kNonceSize>& nonce,
                              ByteView plaintext,
                              ByteView associated_data) {
    CipherCtxPtr ctx{EVP_CIPHER_CTX_new()};
    if (!ctx) throw std::bad_alloc();
    Ciphertext out;
    out.nonce = nonce;
    out.body.resize(plaintext.size());
    int len = 0;
    bool ok = EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, Ciphertext::kNonceSize, nullptr) == 1 &&
              EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.bytes.data(), nonce.data()) == 1;
    if (ok && !associated_data.empty())
        ok = EVP_EncryptUpdate(ctx.get(), nullptr, &len, associated_data.data(),
                               static_cast<int>(associated_data.size())) == 1;
    if (ok && !plaintext.empty())
        ok = EVP_EncryptUpdate(ctx.get(), out.body.data(), &len, plaintext.data(),
                               static_cast<int>(plaintext.size())) == 1;
    std::array<std::uint8_t, 16> scratch{};
    if (ok) ok = EVP_EncryptFinal_ex(ctx.get(), out.body.empty() ? scratch.data() : out.body.data() + len, &len) == 1;
    if (ok)
        ok = EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, Ciphertext::kTagSize, out.tag.data()) == 1;
    if (!ok) throw std::runtime_error("AES-256-GCM encryption failed");
    return out;
}

std::optional<Bytes> decrypt(const SymmetricKey& key, const Ciphertext& c, ByteView associated_data) {
    CipherCtxPtr ctx{EVP_CIPHER_CTX_new()};
    if (!ctx) throw std::bad_alloc();
    Bytes out(c.body.size());
    int len = 0;
    auto tag = c.tag;
    bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, Ciphertext::kNonceSize, nullptr) == 1 &&
              EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.bytes.data(), c.nonce.data()) == 1;
    if (ok && !associated_data.empty())
        ok = EVP_DecryptUpdate(ctx.get(), nullptr, &len, associated_data.data(),
                               static_cast<int>(associated_data.size())) == 1;
    if (ok && !c.body.empty())
        ok = EVP_DecryptUpdate(ctx.get(), out.data(), &len, c.body.data(), static_cast<int>(c.body.size())) == 1;
    if (ok) ok = EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, Ciphertext::kTagSize, tag.data()) == 1;
    std::array<std::uint8_t, 16> scratch{};
    if (ok) ok = EVP_DecryptFinal_ex(ctx.get(), out.empty() ? scratch.data() : out.data() + len, &len) == 1;
    if (!ok) return std::nullopt;
    return out;
}

}  // namespace medchain::crypto
