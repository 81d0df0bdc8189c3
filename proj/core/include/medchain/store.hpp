#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "medchain/crypto.hpp"

namespace medchain::store {

using crypto::Ciphertext;
using crypto::Digest;

enum class ReadStatus { Ok, Missing, Tampered };

const char* to_string(ReadStatus s);

struct ReadResult {
    ReadStatus status = ReadStatus::Missing;
    std::optional<Ciphertext> value;
    /// Holder that produced `value` ("local" or a storage-node id).
    std::string served_by;
    /// Holders whose bytes failed the content-address check during this read.
    std::vector<std::string> bad_holders;
};

struct PlacementReport {
    Digest key;
    std::vector<std::string> holders;
};

/// Content-addressed ciphertext store: every entry lives under hash(wire bytes).
///
/// The store keeps a local copy ("local") plus optional storage-node views that
/// receive replicas. Reads re-hash the bytes of each holder they touch and fall
/// back across holders, so a modified entry surfaces as Tampered and is never
/// returned as data. All members are safe to call concurrently.
class ContentStore {
public:
    static constexpr const char* kLocal = "local";

    explicit ContentStore(std::vector<std::string> node_ids = {});
    ContentStore(const ContentStore& other);
    ContentStore& operator=(const ContentStore& other);

    /// Idempotent: identical content maps to the same key and is stored once.
    Digest put(const Ciphertext& c);
    ReadResult get(const Digest& key) const;
    bool contains(const Digest& key) const;

    /// Copies an existing entry onto k storage nodes chosen by rendezvous
    /// order of hash(key || node id). Throws std::invalid_argument when k
    /// exceeds the node count and std::out_of_range when no intact copy exists.
    PlacementReport replicate(const Digest& key, std::size_t k);

    std::size_t size() const;
    std::vector<Digest> keys() const;
    std::vector<std::string> node_ids() const;
    /// Holders currently storing bytes under `key`, local first.
    std::vector<std::string> holders(const Digest& key) const;

    // Fault injection. Both return false when the holder has no such entry.
    bool tamper(const Digest& key, const std::string& holder, std::size_t byte_index, std::uint8_t xor_mask = 0x01);
    bool erase(const Digest& key, const std::string& holder);

    /// Raw stored bytes, for audits that scan every artifact.
    void for_each_raw(const std::function<void(const std::string& holder, const Digest&, const Bytes&)>& fn) const;

    /// One file per entry named by lowercase hex digest; storage-node views go
    /// into subdirectories named by node id.
    void save(const std::filesystem::path& dir) const;
    static ContentStore load(const std::filesystem::path& dir);

private:
    using Entries = std::map<Digest, Bytes>;

    Entries* holder_entries(const std::string& holder);
    std::vector<std::size_t> rendezvous_order(const Digest& key) const;

    mutable std::mutex mu_;
    Entries local_;
    std::vector<std::string> node_ids_;
    std::vector<Entries> nodes_;
};

}  // namespace medchain::store
