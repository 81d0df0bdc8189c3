#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "medchain/scenario.hpp"
#include "workspace.hpp"

#ifndef MEDCHAIN_SCENARIO_DIR
#define MEDCHAIN_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;
using namespace medchain;
using namespace medchain::cli;

namespace {

enum Exit : int {
    kOk = 0,
    kError = 1,
    kDenied = 2,
    kIntegrity = 3,
    kTimeout = 4,
    kMalformed = 5,
};

struct Globals {
    fs::path dir = "medchain-data";
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> config;
    std::optional<fs::path> out;
    std::string format = "text";

    bool lines() const { return format == "lines"; }
};

/// Ends a command with a specific exit code after printing `message` to stderr.
struct Failure {
    int code;
    std::string message;
};

crypto::Rng make_rng(const Globals& g, const std::string& label) {
    if (!g.seed) return crypto::Rng::from_system();
    ByteWriter w;
    w.u64(*g.seed).var(label);
    return crypto::Rng(w.bytes());
}

void emit(const Globals& g, const std::vector<std::pair<std::string, std::string>>& fields) {
    if (g.lines()) {
        std::string line;
        for (const auto& [k, v] : fields) line += (line.empty() ? "" : " ") + k + "=" + v;
        std::cout << line << "\n";
    } else {
        for (const auto& [k, v] : fields) std::cout << k << ": " << v << "\n";
    }
}

struct Committed {
    sim::ClientReply reply;
    std::uint64_t ticks = 0;
};

/// Runs one transaction through a fresh network restored from the workspace
/// and persists the chain and store when it commits.
Committed execute(const Globals& g, const Workspace& ws, const Identity& sender, const ledger::Transaction& tx) {
    auto cfg = ws.sim_config({sender});
    if (g.seed) cfg.seed = *g.seed;
    auto history = ws.chain();
    sim::Simulation net(cfg, history, ws.content_store());
    auto id = net.submit(sender.id, tx, history.size());
    auto run = net.run_until([&] { return net.request(id).done(); }, cfg.max_ticks);
    if (g.out) {
        std::ofstream t(*g.out);
        for (const auto& line : net.trace()) t << line << "\n";
    }
    if (!run.reached) throw Failure{kTimeout, "consensus timeout after " + std::to_string(run.tick) + " ticks"};
    const auto& reply = *net.request(id).result;
    if (reply.committed) {
        const pbft::Replica* best = nullptr;
        for (auto i : net.honest())
            if (!best || net.replica(i).height() > best->height()) best = &net.replica(i);
        ws.save_chain(best->chain());
        ws.save_store(net.store());
    }
    return {reply, run.tick};
}

void require_committed(const Committed& c) {
    if (c.reply.committed) return;
    auto status = ledger::to_string(c.reply.status);
    if (c.reply.status == ledger::TxStatus::Denied || c.reply.status == ledger::TxStatus::NotOwner)
        throw Failure{kDenied, std::string("policy denial: ") + status};
    throw Failure{kError, std::string("transaction rejected: ") + status};
}

std::string read_input(const std::string& path) {
    std::stringstream ss;
    if (path == "-") {
        ss << std::cin.rdbuf();
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Failure{kMalformed, "cannot read " + path};
        ss << in.rdbuf();
    }
    return ss.str();
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
    return out;
}

// ---- commands --------------------------------------------------------------

int cmd_register(const Globals& g, const std::string& id, const std::string& role, const std::string& profile,
                 bool force) {
    Workspace ws(g.dir, g.config);
    if (ws.has_identity(id) && !force) throw Failure{kError, "identity '" + id + "' already exists (use --force)"};
    auto rng = make_rng(g, "identity/" + id + "/" + std::to_string(ws.chain().size()));
    Identity who;
    who.id = id;
    who.profile = profile;
    if (role == "patient") {
        who.role = ledger::Role::Patient;
        who.keys = identity::join_patient(id, rng).identity.keys;
    } else if (role == "staff") {
        who.role = ledger::Role::Staff;
        who.keys = identity::join_staff(id, profile, rng).identity.keys;
    } else {
        throw Failure{kMalformed, "role must be patient or staff"};
    }
    who.self_key = crypto::gen_sym_key(rng);
    auto result = execute(g, ws, who, identity::registration_tx(who.keys, who.role, profile));
    require_committed(result);
    ws.save_identity(who);
    emit(g, {{"id", id},
             {"role", role},
             {"public_key", who.keys.public_key.hex()},
             {"height", std::to_string(result.reply.height)}});
    return kOk;
}

int cmd_grant(const Globals& g, const std::string& patient_id, const std::string& staff_id,
              std::vector<std::string> types, const std::string& signer_id) {
    Workspace ws(g.dir, g.config);
    auto patient = ws.load_identity(patient_id);
    auto staff = ws.load_identity(staff_id);
    auto signer = signer_id.empty() ? patient : ws.load_identity(signer_id);
    auto state = ledger::replay(ws.chain());
    auto seq = state.last_seq(signer.keys.public_key).value_or(0) + 1;
    std::set<std::string> set(types.begin(), types.end());
    auto tx = ledger::make_signed_tx(signer.keys, seq,
                                     ledger::make_access_payload(patient.keys.public_key, staff.keys.public_key, set));
    auto result = execute(g, ws, signer, tx);
    require_committed(result);

    if (set.empty()) {
        if (auto it = patient.shared.find(staff.keys.public_key); it != patient.shared.end()) {
            patient.retired.push_back(it->second);
            patient.shared.erase(it);
        }
    } else if (!patient.shared.count(staff.keys.public_key)) {
        identity::KeyDirectory directory = ledger::replay(ws.chain()).directory();
        auto p = patient.as_patient();
        auto rng = make_rng(g, "share/" + patient_id + "/" + staff_id + "/" + std::to_string(seq));
        auto env = identity::share_sym_key(p, staff.keys.public_key, directory, rng);
        patient.shared = p.shared_keys;
        ws.save_envelope(staff_id, patient_id, env);
    }
    ws.save_identity(patient);
    emit(g, {{"patient", patient_id},
             {"staff", staff_id},
             {"types", set.empty() ? "(none: revoked)" : join(types, ",")},
             {"height", std::to_string(result.reply.height)}});
    return kOk;
}

int cmd_put(const Globals& g, const std::string& patient_id, const std::string& type, const std::string& file,
            const std::string& for_staff) {
    Workspace ws(g.dir, g.config);
    auto patient = ws.load_identity(patient_id);
    if (patient.role != ledger::Role::Patient) throw Failure{kMalformed, "'" + patient_id + "' is not a patient"};
    auto plaintext = read_input(file);
    crypto::SymmetricKey key = patient.self_key;
    if (!for_staff.empty()) {
        auto staff = ws.load_identity(for_staff);
        auto it = patient.shared.find(staff.keys.public_key);
        if (it == patient.shared.end()) throw Failure{kDenied, "no record key shared with '" + for_staff + "'"};
        key = it->second;
    } else if (patient.shared.size() == 1) {
        key = patient.shared.begin()->second;
    }
    auto rng = make_rng(g, "put/" + patient_id + "/" + type + "/" + plaintext);
    auto c = crypto::encrypt(key, as_bytes(plaintext), ledger::record_associated_data(patient.keys.public_key, type), rng);
    auto state = ledger::replay(ws.chain());
    auto seq = state.last_seq(patient.keys.public_key).value_or(0) + 1;
    auto tx = ledger::make_signed_tx(patient.keys, seq, ledger::make_write_payload(patient.keys.public_key, type, c));
    auto result = execute(g, ws, patient, tx);
    require_committed(result);
    const auto& data = *result.reply.data;
    emit(g, {{"digest", data.digest ? data.digest->hex() : ""}, {"height", std::to_string(result.reply.height)}});
    return kOk;
}

std::optional<crypto::Digest> latest_digest(const ledger::LedgerState& state, const crypto::PublicKey& patient,
                                            const std::string& type) {
    std::optional<crypto::Digest> out;
    for (const auto& e : ledger::audit_trail(state, patient))
        if (e.kind == ledger::AuditKind::Write && e.digest && !e.types.empty() && e.types.front() == type) out = e.digest;
    return out;
}

int cmd_get(const Globals& g, const std::string& actor_id, const std::string& patient_id, const std::string& type,
            const std::string& digest_hex, const std::string& output) {
    Workspace ws(g.dir, g.config);
    auto actor = ws.load_identity(actor_id);
    auto patient = ws.load_identity(patient_id);
    auto state = ledger::replay(ws.chain());
    crypto::Digest digest{};
    if (!digest_hex.empty()) {
        auto d = crypto::Digest::from_hex(digest_hex);
        if (!d) throw Failure{kMalformed, "digest must be 64 hex characters"};
        digest = *d;
    } else if (auto d = latest_digest(state, patient.keys.public_key, type)) {
        digest = *d;
    }
    auto seq = state.last_seq(actor.keys.public_key).value_or(0) + 1;
    auto tx = ledger::make_signed_tx(actor.keys, seq, ledger::make_read_payload(patient.keys.public_key, type, digest));
    auto result = execute(g, ws, actor, tx);
    require_committed(result);
    const auto& data = *result.reply.data;
    if (data.outcome == ledger::DataOutcome::IntegrityAlarm)
        throw Failure{kIntegrity, "integrity alarm: stored copy of " + digest.hex() + " is missing or altered"};
    if (data.outcome == ledger::DataOutcome::NotIndexed)
        throw Failure{kError, "no record " + digest.hex() + " for (" + patient_id + ", " + type + ")"};

    std::vector<crypto::SymmetricKey> keys;
    if (actor.role == ledger::Role::Staff) {
        auto staff = actor.as_staff();
        for (const auto& [from, env] : ws.envelopes_for(actor_id)) identity::open_envelope(staff, env);
        actor.received = staff.received_keys;
        ws.save_identity(actor);
        if (auto it = actor.received.find(patient.keys.public_key); it != actor.received.end()) keys.push_back(it->second);
    } else {
        keys.push_back(actor.self_key);
        for (const auto& [_, k] : actor.shared) keys.push_back(k);
        keys.insert(keys.end(), actor.retired.begin(), actor.retired.end());
    }
    auto ad = ledger::record_associated_data(patient.keys.public_key, type);
    for (const auto& k : keys) {
        if (auto pt = crypto::decrypt(k, *data.ciphertext, ad)) {
            if (output.empty()) {
                std::cout.write(reinterpret_cast<const char*>(pt->data()), static_cast<std::streamsize>(pt->size()));
                if (!g.lines() && (pt->empty() || pt->back() != '\n')) std::cout << "\n";
            } else {
                std::ofstream(output, std::ios::binary)
                    .write(reinterpret_cast<const char*>(pt->data()), static_cast<std::streamsize>(pt->size()));
            }
            if (!data.bad_holders.empty())
                std::cerr << "warning: altered copies on " << join(data.bad_holders, ",") << "\n";
            return kOk;
        }
    }
    throw Failure{kError, "record served but no local key decrypts it"};
}

int cmd_audit(const Globals& g, const std::string& patient_id) {
    Workspace ws(g.dir, g.config);
    auto patient = ws.load_identity(patient_id);
    auto state = ledger::replay(ws.chain());
    if (!state.directory().is(patient.keys.public_key, ledger::Role::Patient))
        throw Failure{kError, "'" + patient_id + "' is not a registered patient"};
    std::map<crypto::PublicKey, std::string> names;
    for (const auto& id : ws.identity_ids()) names[ws.load_identity(id).keys.public_key] = id;
    auto name = [&](const crypto::PublicKey& pk) {
        auto it = names.find(pk);
        return it == names.end() ? pk.hex().substr(0, 16) : it->second;
    };
    for (const auto& e : ledger::audit_trail(state, patient.keys.public_key)) {
        std::vector<std::pair<std::string, std::string>> f{
            {"height", std::to_string(e.height)}, {"event", ledger::to_string(e.kind)}, {"actor", name(e.actor)}};
        if (e.staff) f.emplace_back("staff", name(*e.staff));
        f.emplace_back("types", join(e.types, ","));
        if (e.digest) f.emplace_back("digest", e.digest->hex());
        if (g.lines()) {
            emit(g, f);
        } else {
            std::cout << "#" << e.height << " " << ledger::to_string(e.kind) << " by " << name(e.actor);
            if (e.staff && *e.staff != e.actor) std::cout << " for " << name(*e.staff);
            if (!e.types.empty()) std::cout << " [" << join(e.types, ", ") << "]";
            if (e.digest) std::cout << " " << e.digest->hex();
            std::cout << "\n";
        }
    }
    return kOk;
}

scenario::Scenario load(const Globals& g, const fs::path& file) {
    auto sc = scenario::load_scenario(file);
    if (g.config) {
        std::ifstream in(*g.config);
        if (!in) throw Failure{kMalformed, "cannot read " + g.config->string()};
        std::string line;
        while (std::getline(in, line)) {
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            auto eq = line.find('=');
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            if (eq == std::string::npos) throw Failure{kMalformed, g.config->string() + ": expected key = value"};
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t\r"));
                s.erase(s.find_last_not_of(" \t\r") + 1);
                return s;
            };
            sim::apply_setting(sc.sim, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    return sc;
}

void print_report(const Globals& g, const scenario::Report& r) {
    const auto& m = r.metrics;
    std::vector<std::pair<std::string, std::string>> metrics{
        {"ticks", std::to_string(m.ticks)},
        {"committed_height", std::to_string(m.committed_height)},
        {"view_changes", std::to_string(m.view_changes)},
        {"requests", std::to_string(m.requests)},
        {"committed", std::to_string(m.committed)},
        {"rejected", std::to_string(m.rejected)},
        {"timeouts", std::to_string(m.timeouts)},
        {"rate_limited", std::to_string(m.rate_limited)},
        {"foreign_rejected", std::to_string(m.foreign_rejected)},
        {"misbehavior", std::to_string(m.misbehavior)},
        {"mean_latency", std::to_string(m.mean_latency)},
        {"max_latency", std::to_string(m.max_latency)},
        {"messages_sent", std::to_string(m.messages_sent)},
        {"trace_hash", m.trace_hash.hex()},
    };
    if (m.baseline_latency) metrics.emplace_back("baseline_latency", std::to_string(*m.baseline_latency));
    if (g.lines()) {
        for (const auto& a : r.actions)
            std::cout << "action line=" << a.line << " outcome=" << scenario::to_string(a.outcome)
                      << " status=" << ledger::to_string(a.status) << " latency=" << a.latency << "\n";
        for (const auto& e : r.expectations)
            std::cout << "expect line=" << e.line << " result=" << (e.passed ? "pass" : "fail") << "\n";
        for (const auto& [k, v] : metrics) std::cout << "metric " << k << "=" << v << "\n";
        std::cout << "check safety=" << (r.safety ? "pass" : "fail") << " replay=" << (r.replay_ok ? "pass" : "fail")
                  << " privacy=" << (r.privacy.empty() ? "pass" : "fail") << "\n";
        std::cout << "result scenario=" << r.name << " " << (r.passed() ? "pass" : "fail") << "\n";
        return;
    }
    std::cout << "scenario " << r.name << "\n";
    for (const auto& a : r.actions) {
        std::cout << "  " << a.line << ": " << a.text << " -> " << scenario::to_string(a.outcome);
        if (!a.detail.empty()) std::cout << " (" << a.detail << ")";
        std::cout << "\n";
    }
    for (const auto& e : r.expectations)
        std::cout << "  [" << (e.passed ? "pass" : "FAIL") << "] " << e.line << ": " << e.text << "  -- " << e.detail
                  << "\n";
    std::cout << "metrics\n";
    for (const auto& [k, v] : metrics) std::cout << "  " << k << " = " << v << "\n";
    for (const auto& p : r.privacy) std::cout << "  privacy finding: " << p.what << " in " << p.artifact << "\n";
    std::cout << "result: " << (r.passed() ? "PASS" : "FAIL") << "\n";
}

int cmd_run_scenario(const Globals& g, const fs::path& file) {
    auto sc = load(g, file);
    scenario::RunOptions opts;
    opts.seed = g.seed;
    std::vector<std::string> trace;
    if (g.out) opts.trace_out = &trace;
    auto report = scenario::run_scenario(sc, opts);
    if (g.out) {
        std::ofstream t(*g.out);
        for (const auto& line : trace) t << line << "\n";
    }
    print_report(g, report);
    if (!report.passed()) {
        std::vector<std::string> failed;
        for (const auto& e : report.expectations)
            if (!e.passed) failed.push_back("line " + std::to_string(e.line));
        throw Failure{kError, "failed expectations: " + join(failed, ", ")};
    }
    return kOk;
}

struct AttackRow {
    const char* attack;
    const char* scenario;
    const char* defence;
};

constexpr AttackRow kAttacks[] = {
    {"Denial of Service", "dos", "per-node rate limit"},
    {"Modification", "modification", "hash-chained blocks, replica validation"},
    {"Public blockchain modification", "public_modification", "closed validator set, commit certificates"},
    {"Storage", "storage", "content addressing, on-chain digest"},
    {"Appending", "appending", "every transaction re-validated by every replica"},
    {"51% (f Byzantine replicas)", "majority", "2f+1 quorums among 3f+1 replicas"},
    {"Distributed DoS", "ddos", "rate limit, roster admission"},
};

int cmd_attack_suite(const Globals& g, const fs::path& dir) {
    bool all = true;
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : kAttacks) {
        std::cerr << "running " << row.scenario << "...\n";
        auto sc = load(g, dir / (std::string(row.scenario) + ".scn"));
        scenario::RunOptions opts;
        opts.seed = g.seed;
        auto r = scenario::run_scenario(sc, opts);
        auto passed = std::count_if(r.expectations.begin(), r.expectations.end(), [](const auto& e) { return e.passed; });
        bool ok = r.passed() && r.safety && r.replay_ok && r.privacy.empty();
        all = all && ok;
        rows.push_back({row.attack, row.scenario,
                        std::to_string(passed) + "/" + std::to_string(r.expectations.size()),
                        r.safety ? "yes" : "no", std::to_string(r.metrics.view_changes),
                        std::to_string(r.metrics.rate_limited + r.metrics.foreign_rejected), row.defence,
                        ok ? "resisted" : "NOT resisted"});
    }
    const std::vector<std::string> header{"attack", "scenario", "checks", "safe", "view changes", "rejected msgs",
                                          "defence", "result"};
    if (g.lines()) {
        for (const auto& r : rows)
            std::cout << "attack=\"" << r[0] << "\" scenario=" << r[1] << " checks=" << r[2] << " safe=" << r[3]
                      << " view_changes=" << r[4] << " rejected=" << r[5] << " result=" << (r[7] == "resisted" ? "pass" : "fail")
                      << "\n";
    } else {
        std::vector<std::size_t> width(header.size());
        for (std::size_t i = 0; i < header.size(); ++i) {
            width[i] = header[i].size();
            for (const auto& r : rows) width[i] = std::max(width[i], r[i].size());
        }
        auto print = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i)
                std::cout << r[i] << std::string(width[i] - r[i].size() + (i + 1 < r.size() ? 2 : 0), ' ');
            std::cout << "\n";
        };
        print(header);
        for (const auto& r : rows) print(r);
    }
    if (!all) throw Failure{kError, "one or more attacks were not resisted"};
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"medchain: patient-controlled health records on a replicated ledger"};
    app.require_subcommand(1);
    Globals g;
    std::string dir = g.dir.string();
    std::uint64_t seed = 0;
    std::string config, out;
    app.add_option("--dir", dir, "Workspace directory")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed, "Deterministic seed for keys, nonces and the network");
    app.add_option("--config", config, "Network settings file (key = value)");
    app.add_option("--out", out, "Write the message trace to this file");
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"text", "lines"}))->capture_default_str();

    std::string id, role, profile, patient, staff, type, file, for_staff, signer, digest, output;
    std::vector<std::string> types;
    bool force = false;
    std::string scenario_file, scenario_dir = MEDCHAIN_SCENARIO_DIR;

    auto* reg = app.add_subcommand("register", "Create an identity and register its key on the ledger");
    reg->alias("keygen");
    reg->add_option("id", id)->required();
    reg->add_option("role", role)->required()->check(CLI::IsMember({"patient", "staff"}));
    reg->add_option("--profile", profile, "Staff profile text");
    reg->add_flag("--force", force, "Replace an existing local identity");

    auto* grant = app.add_subcommand("grant", "Allow a staff member to read the listed data types");
    grant->add_option("patient", patient)->required();
    grant->add_option("staff", staff)->required();
    grant->add_option("types", types)->required();
    grant->add_option("--as", signer, "Sign with another identity");

    auto* revoke = app.add_subcommand("revoke", "Withdraw every permission of a staff member");
    revoke->add_option("patient", patient)->required();
    revoke->add_option("staff", staff)->required();
    revoke->add_option("--as", signer, "Sign with another identity");

    auto* put = app.add_subcommand("put", "Encrypt a record file and anchor its digest on the ledger");
    put->add_option("patient", patient)->required();
    put->add_option("type", type)->required();
    put->add_option("file", file, "Plaintext file, or - for stdin")->required();
    put->add_option("--for", for_staff, "Encrypt under the key shared with this staff member");

    auto* get = app.add_subcommand("get", "Fetch, verify and decrypt a record");
    get->add_option("actor", id)->required();
    get->add_option("patient", patient)->required();
    get->add_option("type", type)->required();
    get->add_option("--digest", digest, "Record digest (default: latest for the type)");
    get->add_option("--output", output, "Write plaintext here instead of stdout");

    auto* audit = app.add_subcommand("audit", "List access and data events for a patient");
    audit->add_option("patient", patient)->required();

    auto* run = app.add_subcommand("run-scenario", "Execute a scenario file and check its expectations");
    run->add_option("file", scenario_file)->required()->check(CLI::ExistingFile);

    auto* suite = app.add_subcommand("attack-suite", "Run one scenario per attack and print the resilience matrix");
    suite->add_option("--scenarios", scenario_dir, "Directory holding the bundled scenarios")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kMalformed;
    }
    g.dir = dir;
    if (*seed_opt) g.seed = seed;
    if (!config.empty()) g.config = config;
    if (!out.empty()) g.out = out;

    try {
        if (*reg) return cmd_register(g, id, role, profile, force);
        if (*grant) return cmd_grant(g, patient, staff, types, signer);
        if (*revoke) return cmd_grant(g, patient, staff, {}, signer);
        if (*put) return cmd_put(g, patient, type, file, for_staff);
        if (*get) return cmd_get(g, id, patient, type, digest, output);
        if (*audit) return cmd_audit(g, patient);
        if (*run) return cmd_run_scenario(g, scenario_file);
        if (*suite) return cmd_attack_suite(g, scenario_dir);
    } catch (const Failure& f) {
        std::cerr << "medchain: " << f.message << "\n";
        return f.code;
    } catch (const InputError& e) {
        std::cerr << "medchain: " << e.what() << "\n";
        return kMalformed;
    } catch (const scenario::ScenarioError& e) {
        std::cerr << "medchain: " << e.what() << "\n";
        return kMalformed;
    } catch (const sim::ConfigError& e) {
        std::cerr << "medchain: " << e.what() << "\n";
        return kMalformed;
    } catch (const DecodeError& e) {
        std::cerr << "medchain: malformed input: " << e.what() << "\n";
        return kMalformed;
    } catch (const std::exception& e) {
        std::cerr << "medchain: " << e.what() << "\n";
        return kError;
    }
    return kError;
}
