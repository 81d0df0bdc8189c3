#include "medchain/store.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace medchain::store {

namespace {

bool intact(const Digest& key, const Bytes& bytes) {
    return crypto::hash(bytes) == key;
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), {});
}

std::map<Digest, Bytes> load_entries(const std::filesystem::path& dir) {
    std::map<Digest, Bytes> out;
    for (const auto& item : std::filesystem::directory_iterator(dir)) {
        if (!item.is_regular_file()) continue;
        auto key = Digest::from_hex(item.path().filename().string());
        if (!key) continue;
        out[*key] = read_file(item.path());
    }
    return out;
}

}  // namespace

const char* to_string(ReadStatus s) {
    switch (s) {
        case ReadStatus::Ok: return "ok";
        case ReadStatus::Missing: return "missing";
        case ReadStatus::Tampered: return "tampered";
    }
    return "unknown";
}

ContentStore::ContentStore(std::vector<std::string> node_ids)
    : node_ids_(std::move(node_ids)), nodes_(node_ids_.size()) {}

ContentStore::ContentStore(const ContentStore& other) {
    std::lock_guard lock(other.mu_);
    local_ = other.local_;
    node_ids_ = other.node_ids_;
    nodes_ = other.nodes_;
}

ContentStore& ContentStore::operator=(const ContentStore& other) {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    local_ = other.local_;
    node_ids_ = other.node_ids_;
    nodes_ = other.nodes_;
    return *this;
}

Digest ContentStore::put(const Ciphertext& c) {
    Bytes wire = c.wire();
    Digest key = crypto::hash(wire);
    std::lock_guard lock(mu_);
    auto it = local_.find(key);
    // Re-putting identical content repairs a damaged local copy.
    if (it == local_.end() || !intact(key, it->second)) local_[key] = std::move(wire);
    return key;
}

std::vector<std::size_t> ContentStore::rendezvous_order(const Digest& key) const {
    std::vector<std::pair<Digest, std::size_t>> ranked;
    ranked.reserve(node_ids_.size());
    for (std::size_t i = 0; i < node_ids_.size(); ++i) {
        ByteWriter w;
        w.fixed(key.bytes).var(node_ids_[i]);
        ranked.emplace_back(crypto::hash(w.bytes()), i);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::size_t> order;
    order.reserve(ranked.size());
    for (const auto& r : ranked) order.push_back(r.second);
    return order;
}

ReadResult ContentStore::get(const Digest& key) const {
    std::lock_guard lock(mu_);
    ReadResult result;
    bool saw_damage = false;

    auto try_holder = [&](const std::string& name, const Entries& entries) {
        auto it = entries.find(key);
        if (it == entries.end()) return false;
        if (!intact(key, it->second)) {
            saw_damage = true;
            result.bad_holders.push_back(name);
            return false;
        }
        auto parsed = Ciphertext::from_wire(it->second);
        if (!parsed) {
            saw_damage = true;
            result.bad_holders.push_back(name);
            return false;
        }
        result.status = ReadStatus::Ok;
        result.value = std::move(parsed);
        result.served_by = name;
        return true;
    };

    if (try_holder(kLocal, local_)) return result;
    for (auto idx : rendezvous_order(key)) {
        if (try_holder(node_ids_[idx], nodes_[idx])) return result;
    }
    result.status = saw_damage ? ReadStatus::Tampered : ReadStatus::Missing;
    return result;
}

bool ContentStore::contains(const Digest& key) const {
    std::lock_guard lock(mu_);
    if (local_.count(key)) return true;
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const Entries& e) { return e.count(key) > 0; });
}

PlacementReport ContentStore::replicate(const Digest& key, std::size_t k) {
    std::lock_guard lock(mu_);
    if (k > node_ids_.size())
        throw std::invalid_argument("replication factor " + std::to_string(k) + " exceeds " +
                                    std::to_string(node_ids_.size()) + " storage nodes");
    const Bytes* source = nullptr;
    if (auto it = local_.find(key); it != local_.end() && intact(key, it->second)) source = &it->second;
    for (std::size_t i = 0; !source && i < nodes_.size(); ++i) {
        if (auto it = nodes_[i].find(key); it != nodes_[i].end() && intact(key, it->second)) source = &it->second;
    }
    if (!source) throw std::out_of_range("no intact copy of " + key.hex() + " to replicate");

    const Bytes copy = *source;
    PlacementReport report{key, {}};
    auto order = rendezvous_order(key);
    for (std::size_t i = 0; i < k; ++i) {
        nodes_[order[i]][key] = copy;
        report.holders.push_back(node_ids_[order[i]]);
    }
    return report;
}

std::size_t ContentStore::size() const {
    std::lock_guard lock(mu_);
    return local_.size();
}

std::vector<Digest> ContentStore::keys() const {
    std::lock_guard lock(mu_);
    std::vector<Digest> out;
    out.reserve(local_.size());
    for (const auto& [k, _] : local_) out.push_back(k);
    return out;
}

std::vector<std::string> ContentStore::node_ids() const {
    std::lock_guard lock(mu_);
    return node_ids_;
}

std::vector<std::string> ContentStore::holders(const Digest& key) const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    if (local_.count(key)) out.emplace_back(kLocal);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].count(key)) out.push_back(node_ids_[i]);
    return out;
}

ContentStore::Entries* ContentStore::holder_entries(const std::string& holder) {
    if (holder == kLocal) return &local_;
    for (std::size_t i = 0; i < node_ids_.size(); ++i)
        if (node_ids_[i] == holder) return &nodes_[i];
    return nullptr;
}

bool ContentStore::tamper(const Digest& key, const std::string& holder, std::size_t byte_index, std::uint8_t xor_mask) {
    std::lock_guard lock(mu_);
    auto* entries = holder_entries(holder);
    if (!entries) return false;
    auto it = entries->find(key);
    if (it == entries->end() || it->second.empty()) return false;
    it->second[byte_index % it->second.size()] ^= (xor_mask == 0 ? 0x01 : xor_mask);
    return true;
}

bool ContentStore::erase(const Digest& key, const std::string& holder) {
    std::lock_guard lock(mu_);
    auto* entries = holder_entries(holder);
    return entries && entries->erase(key) > 0;
}

void ContentStore::for_each_raw(
    const std::function<void(const std::string&, const Digest&, const Bytes&)>& fn) const {
    std::lock_guard lock(mu_);
    for (const auto& [k, v] : local_) fn(kLocal, k, v);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        for (const auto& [k, v] : nodes_[i]) fn(node_ids_[i], k, v);
}

void ContentStore::save(const std::filesystem::path& dir) const {
    std::lock_guard lock(mu_);
    std::filesystem::create_directories(dir);
    for (const auto& [k, v] : local_) write_file(dir / k.hex(), v);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        auto sub = dir / node_ids_[i];
        std::filesystem::create_directories(sub);
        for (const auto& [k, v] : nodes_[i]) write_file(sub / k.hex(), v);
    }
}

ContentStore ContentStore::load(const std::filesystem::path& dir) {
    std::vector<std::string> ids;
    if (std::filesystem::exists(dir)) {
        for (const auto& item : std::filesystem::directory_iterator(dir))
            if (item.is_directory()) ids.push_back(item.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());
    ContentStore out(ids);
    if (!std::filesystem::exists(dir)) return out;
    out.local_ = load_entries(dir);
    for (std::size_t i = 0; i < ids.size(); ++i) out.nodes_[i] = load_entries(dir / ids[i]);
    return out;
}

}  // namespace medchain::store
