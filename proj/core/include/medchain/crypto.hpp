#pragma once

// Cryptographic primitives used across the ledger: SHA-256 digests,
// AES-256-GCM authenticated encryption and ECDSA over secp256k1 with
// RFC 6979 deterministic nonces and low-s normalization.
//
// All functions are pure or touch only caller-owned state and may be called
// from several threads at once. Rng instances are not shared between threads.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "medchain/bytes.hpp"

namespace medchain::crypto {

struct Digest {
    static constexpr std::size_t kSize = 32;
    std::array<std::uint8_t, kSize> bytes{};

    std::string hex() const { return to_hex(bytes); }
    /// Requires exactly 64 hex characters.
    static std::optional<Digest> from_hex(std::string_view hex);
    bool is_zero() const;

    auto operator<=>(const Digest&) const = default;
};

/// SHA-256 of `data`.
Digest hash(ByteView data);
inline Digest hash(std::string_view s) { return hash(as_bytes(s)); }

/// Deterministic byte generator: SHA-256 over (seed key, block counter).
/// Fixed seeds make every key, nonce and schedule in a run reproducible;
/// `from_system()` seeds from the operating system for real deployments.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    explicit Rng(ByteView seed_material);
    static Rng from_system();

    void fill(std::span<std::uint8_t> out);
    std::uint64_t next_u64();

    template <std::size_t N>
    std::array<std::uint8_t, N> bytes() {
        std::array<std::uint8_t, N> out{};
        fill(out);
        return out;
    }

private:
    void refill();

    std::array<std::uint8_t, 32> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint8_t, 32> block_{};
    std::size_t used_ = 32;
};

struct PublicKey {
    static constexpr std::size_t kSize = 33;
    std::array<std::uint8_t, kSize> bytes{};

    std::string hex() const { return to_hex(bytes); }
    /// hash(public key); the form used as an account address.
    Digest address() const { return hash(bytes); }

    auto operator<=>(const PublicKey&) const = default;
};

struct PrivateKey {
    static constexpr std::size_t kSize = 32;
    std::array<std::uint8_t, kSize> bytes{};

    bool operator==(const PrivateKey&) const = default;
};

struct SigningKeyPair {
    PublicKey public_key;
    PrivateKey private_key;
};

struct Signature {
    static constexpr std::size_t kSize = 64;
    std::array<std::uint8_t, 32> r{};
    std::array<std::uint8_t, 32> s{};

    std::array<std::uint8_t, kSize> encode() const;
    static Signature decode(ByteView bytes);

    auto operator<=>(const Signature&) const = default;
};

/// Throws std::invalid_argument unless 1 <= scalar < n.
PublicKey derive_public_key(const PrivateKey& key);
bool is_valid_public_key(const PublicKey& key);
bool is_valid_private_key(const PrivateKey& key);

SigningKeyPair gen_sig_keypair(Rng& rng);

/// ECDSA over SHA-256(message). The nonce is derived per RFC 6979 and s is
/// normalized into the lower half of the group order.
/// Throws std::invalid_argument for an out-of-range private scalar.
Signature sign(const PrivateKey& key, ByteView message);

/// False for malformed points, out-of-range or high-s signatures, and any
/// mismatch. Never throws.
bool verify(const PublicKey& key, ByteView message, const Signature& sig);

/// verify() memoized in a bounded process-wide table. Replicas receive the
/// same signed bytes many times; the answer is a pure function of the inputs.
bool verify_cached(const PublicKey& key, ByteView message, const Signature& sig);

/// RFC 6979 nonce for (key, SHA-256(message)); exposed for known-answer tests.
std::array<std::uint8_t, 32> rfc6979_nonce(const PrivateKey& key, ByteView message);

/// x-coordinate of private * public. nullopt for an invalid point or scalar.
std::optional<std::array<std::uint8_t, 32>> ecdh(const PrivateKey& priv, const PublicKey& pub);

struct SymmetricKey {
    static constexpr std::size_t kSize = 32;
    std::array<std::uint8_t, kSize> bytes{};

    bool operator==(const SymmetricKey&) const = default;
};

SymmetricKey gen_sym_key(Rng& rng);

struct Ciphertext {
    static constexpr std::size_t kNonceSize = 12;
    static constexpr std::size_t kTagSize = 16;

    std::array<std::uint8_t, kNonceSize> nonce{};
    Bytes body;
    std::array<std::uint8_t, kTagSize> tag{};

    /// nonce || body || tag
    Bytes wire() const;
    /// Inverse of wire(); nullopt when shorter than nonce + tag.
    static std::optional<Ciphertext> from_wire(ByteView wire);
    /// hash(wire()); the content address used by the off-chain store.
    Digest digest() const { return hash(wire()); }

    bool operator==(const Ciphertext&) const = default;
};

/// AES-256-GCM with a fresh 12-byte nonce drawn from `rng`.
Ciphertext encrypt(const SymmetricKey& key, ByteView plaintext, ByteView associated_data, Rng& rng);
Ciphertext encrypt_with_nonce(const SymmetricKey& key,
                              const std::array<std::uint8_t, Ciphertext::kNonceSize>& nonce,
                              ByteView plaintext,
                              ByteView associated_data);
/// nullopt on authentication failure (wrong key, altered ciphertext or associated data).
std::optional<Bytes> decrypt(const SymmetricKey& key, const Ciphertext& c, ByteView associated_data);

}  // namespace medchain::crypto

template <>
struct std::hash<medchain::crypto::Digest> {
    std::size_t operator()(const medchain::crypto::Digest& d) const noexcept {
        std::size_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | d.bytes[i];
        return v;
    }
};

template <>
struct std::hash<medchain::crypto::PublicKey> {
    std::size_t operator()(const medchain::crypto::PublicKey& k) const noexcept {
        std::size_t v = 0;
        for (int i = 1; i < 9; ++i) v = (v << 8) | k.bytes[i];
        return v;
    }
};
