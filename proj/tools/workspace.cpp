#include "workspace.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace medchain::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDefaultConfig =
    "# network settings shared by every command in this workspace\n"
    "seed = 1\n"
    "replicas = 4\n"
    "storage = 3\n"
    "replication = 2\n";

template <std::size_t N>
std::array<std::uint8_t, N> fixed_hex(const std::string& field, const std::string& hex) {
    Bytes raw;
    try {
        raw = from_hex(hex);
    } catch (const DecodeError&) {
        throw InputError(field + ": not hex");
    }
    if (raw.size() != N) throw InputError(field + ": expected " + std::to_string(N) + " bytes");
    std::array<std::uint8_t, N> out{};
    std::copy(raw.begin(), raw.end(), out.begin());
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, std::string_view data) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

bool valid_id(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_' || c == '.';
    }) && id.front() != '.';
}

}  // namespace

identity::PatientIdentity Identity::as_patient() const {
    return {id, keys, shared};
}

identity::StaffIdentity Identity::as_staff() const {
    return {id, keys, received, profile};
}

std::string serialize_identity(const Identity& who) {
    std::ostringstream o;
    o << "id " << who.id << "\n";
    o << "role " << ledger::to_string(who.role) << "\n";
    o << "profile " << who.profile << "\n";
    o << "private " << to_hex(who.keys.private_key.bytes) << "\n";
    o << "self " << to_hex(who.self_key.bytes) << "\n";
    for (const auto& [pk, k] : who.shared) o << "shared " << pk.hex() << " " << to_hex(k.bytes) << "\n";
    for (const auto& k : who.retired) o << "retired " << to_hex(k.bytes) << "\n";
    for (const auto& [pk, k] : who.received) o << "received " << pk.hex() << " " << to_hex(k.bytes) << "\n";
    return o.str();
}

Identity parse_identity(const std::string& text) {
    Identity who;
    bool has_key = false;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto sp = line.find(' ');
        auto field = line.substr(0, sp);
        auto rest = sp == std::string::npos ? std::string{} : line.substr(sp + 1);
        std::istringstream words(rest);
        std::string a, b;
        words >> a >> b;
        if (field == "id") {
            who.id = rest;
        } else if (field == "role") {
            if (rest == "patient") who.role = ledger::Role::Patient;
            else if (rest == "staff") who.role = ledger::Role::Staff;
            else throw InputError("role: expected patient or staff");
        } else if (field == "profile") {
            who.profile = rest;
        } else if (field == "private") {
            who.keys.private_key.bytes = fixed_hex<crypto::PrivateKey::kSize>(field, a);
            if (!crypto::is_valid_private_key(who.keys.private_key)) throw InputError("private: out of range");
            who.keys.public_key = crypto::derive_public_key(who.keys.private_key);
            has_key = true;
        } else if (field == "self") {
            who.self_key.bytes = fixed_hex<crypto::SymmetricKey::kSize>(field, a);
        } else if (field == "shared" || field == "received") {
            crypto::PublicKey pk{fixed_hex<crypto::PublicKey::kSize>(field, a)};
            crypto::SymmetricKey k{fixed_hex<crypto::SymmetricKey::kSize>(field, b)};
            (field == "shared" ? who.shared : who.received)[pk] = k;
        } else if (field == "retired") {
            who.retired.push_back({fixed_hex<crypto::SymmetricKey::kSize>(field, a)});
        } else {
            throw InputError("unknown key-file field '" + field + "'");
        }
    }
    if (who.id.empty() || !has_key) throw InputError("key file lacks id or private key");
    return who;
}

Workspace::Workspace(fs::path dir, std::optional<fs::path> config)
    : dir_(std::move(dir)), config_(config ? *config : dir_ / "network.conf") {
    fs::create_directories(dir_ / "keys");
    if (!config && !fs::exists(config_)) write_file(config_, kDefaultConfig);
}

fs::path Workspace::key_path(const std::string& id) const {
    if (!valid_id(id)) throw InputError("invalid identity name '" + id + "'");
    return dir_ / "keys" / (id + ".key");
}

bool Workspace::has_identity(const std::string& id) const {
    return fs::exists(key_path(id));
}

Identity Workspace::load_identity(const std::string& id) const {
    auto p = key_path(id);
    if (!fs::exists(p)) throw InputError("unknown identity '" + id + "'");
    return parse_identity(read_file(p));
}

void Workspace::save_identity(const Identity& who) const {
    auto p = key_path(who.id);
    auto tmp = p;
    tmp += ".tmp";
    write_file(tmp, serialize_identity(who));
    fs::permissions(tmp, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
    fs::rename(tmp, p);
}

std::vector<std::string> Workspace::identity_ids() const {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir_ / "keys"))
        if (e.path().extension() == ".key") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
}

sim::SimConfig Workspace::sim_config(const std::vector<Identity>& extra) const {
    sim::SimConfig cfg;
    try {
        cfg = sim::parse_sim_config(read_file(config_));
    } catch (const sim::ConfigError& e) {
        throw InputError(config_.string() + ": " + e.what());
    }
    auto add = [&](const std::string& id, ledger::Role role) {
        bool known = std::any_of(cfg.nodes.begin(), cfg.nodes.end(), [&](const auto& n) { return n.first == id; });
        if (!known) cfg.nodes.emplace_back(id, role == ledger::Role::Patient ? sim::NodeRole::Patient : sim::NodeRole::Staff);
    };
    for (const auto& id : identity_ids()) add(id, load_identity(id).role);
    for (const auto& who : extra) add(who.id, who.role);
    return cfg;
}

std::vector<ledger::Block> Workspace::chain() const {
    auto p = dir_ / "chain.bin";
    if (!fs::exists(p)) return {};
    try {
        return ledger::read_chain_file(p);
    } catch (const DecodeError& e) {
        throw InputError("chain.bin: " + std::string(e.what()));
    }
}

void Workspace::save_chain(const std::vector<ledger::Block>& chain) const {
    ledger::write_chain_file(dir_ / "chain.bin", chain);
}

std::optional<store::ContentStore> Workspace::content_store() const {
    if (!fs::exists(dir_ / "store")) return std::nullopt;
    return store::ContentStore::load(dir_ / "store");
}

void Workspace::save_store(const store::ContentStore& s) const {
    s.save(dir_ / "store");
}

void Workspace::save_envelope(const std::string& staff_id, const std::string& patient_id,
                              const identity::SecureEnvelope& env) const {
    auto bytes = env.encode();
    write_file(dir_ / "envelopes" / staff_id / (patient_id + ".env"),
               std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::map<std::string, identity::SecureEnvelope> Workspace::envelopes_for(const std::string& staff_id) const {
    std::map<std::string, identity::SecureEnvelope> out;
    auto dir = dir_ / "envelopes" / staff_id;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".env") continue;
        auto raw = read_file(e.path());
        try {
            out.emplace(e.path().stem().string(), identity::SecureEnvelope::decode(as_bytes(raw)));
        } catch (const DecodeError&) {
            throw InputError(e.path().string() + ": malformed envelope");
        }
    }
    return out;
}

}  // namespace medchain::cli
