#include "medchain/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace medchain::scenario {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(int line, const std::string& what, const std::string& v) {
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw ScenarioError(line, what + ": expected a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ScenarioError(line, what + ": value out of range '" + v + "'");
    }
}

double parse_double(int line, const std::string& what, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ScenarioError(line, what + ": expected a number, got '" + v + "'");
    return x;
}

bool compare(const std::string& op, double lhs, double rhs) {
    if (op == ">=") return lhs >= rhs;
    if (op == "<=") return lhs <= rhs;
    if (op == "==") return lhs == rhs;
    if (op == ">") return lhs > rhs;
    if (op == "<") return lhs < rhs;
    if (op == "!=") return lhs != rhs;
    return false;
}

bool is_comparator(const std::string& op) {
    return op == ">=" || op == "<=" || op == "==" || op == ">" || op == "<" || op == "!=";
}

std::string fmt(double x) {
    std::ostringstream o;
    o.precision(4);
    o << x;
    return o.str();
}

std::optional<Outcome> parse_outcome(const std::string& s) {
    for (auto o : {Outcome::None, Outcome::Ok, Outcome::Denied, Outcome::Rejected, Outcome::IntegrityAlarm,
                   Outcome::NotIndexed, Outcome::Undecryptable, Outcome::Timeout})
        if (s == to_string(o)) return o;
    return std::nullopt;
}

std::optional<ledger::TxStatus> parse_status(const std::string& s) {
    using ledger::TxStatus;
    for (auto st : {TxStatus::Accepted, TxStatus::BadSignature, TxStatus::StaleSeq, TxStatus::UnknownSender,
                    TxStatus::AlreadyRegistered, TxStatus::NotOwner, TxStatus::InconsistentPolicy,
                    TxStatus::UnregisteredParty, TxStatus::Denied, TxStatus::BadAttachment})
        if (s == ledger::to_string(st)) return st;
    return std::nullopt;
}

struct Actor {
    sim::NodeId id;
    ledger::Role role = ledger::Role::Patient;
    crypto::SigningKeyPair keys;
    std::uint64_t seq = 0;
    std::optional<identity::PatientIdentity> patient;
    std::optional<identity::StaffIdentity> staff;
    crypto::SymmetricKey self_key;
    /// Keys from revoked shares; the patient still reads records sealed with them.
    std::vector<crypto::SymmetricKey> retired_keys;
    bool registered = false;
};

class Engine {
public:
    Engine(const Scenario& sc, const RunOptions& opts)
        : sc_(sc), opts_(opts), cfg_(configure(sc, opts)), sim_(cfg_), rng_(seed_material("engine")),
          mt_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {}

    Report run() {
        report_.name = sc_.name;
        for (const auto& a : sc_.script) {
            if (a.verb == "expect") expect(a);
            else act(a);
        }
        finish();
        return std::move(report_);
    }

private:
    static sim::SimConfig configure(const Scenario& sc, const RunOptions& opts) {
        auto cfg = sc.sim;
        if (opts.seed) cfg.seed = *opts.seed;
        cfg.record_trace = true;
        return cfg;
    }

    Bytes seed_material(const std::string& label) const {
        ByteWriter w;
        w.u64(cfg_.seed).var(label);
        return std::move(w).take();
    }

    // ---- actions -----------------------------------------------------------

    void act(const Action& a) {
        if (a.verb == "register") do_register(a);
        else if (a.verb == "grant") do_grant(a, false);
        else if (a.verb == "revoke") do_grant(a, true);
        else if (a.verb == "put") do_put(a);
        else if (a.verb == "get") do_get(a);
        else if (a.verb == "fault") do_fault(a);
        else if (a.verb == "run") sim_.run_until([] { return false; }, parse_u64(a.line, "run", arg(a, 0)));
        else if (a.verb == "forge-chain") do_forge(a);
        else if (a.verb == "send-foreign") do_foreign(a);
        else if (a.verb == "tamper-blocks") do_tamper_blocks(a);
        else throw ScenarioError(a.line, "unknown action '" + a.verb + "'");
    }

    static const std::string& arg(const Action& a, std::size_t i) {
        if (i >= a.args.size()) throw ScenarioError(a.line, a.verb + ": missing argument " + std::to_string(i + 1));
        return a.args[i];
    }

    Actor& actor(const Action& a, const std::string& id, std::optional<ledger::Role> role = std::nullopt) {
        auto it = actors_.find(id);
        if (it == actors_.end() || !it->second.registered)
            throw ScenarioError(a.line, "'" + id + "' is not a registered actor");
        if (role && it->second.role != *role)
            throw ScenarioError(a.line, "'" + id + "' is not a " + ledger::to_string(*role));
        return it->second;
    }

    ActionResult submit(const Action& a, Actor& who, const ledger::Transaction& tx) {
        ActionResult r;
        r.line = a.line;
        r.text = a.text;
        auto id = sim_.submit(who.id, tx, known_height_);
        request_ids_.push_back(id);
        auto run = sim_.run_until([&] { return sim_.request(id).done(); }, cfg_.max_ticks);
        const auto& req = sim_.request(id);
        if (!run.reached) {
            r.outcome = Outcome::Timeout;
            r.detail = "no f+1 matching replies within " + std::to_string(cfg_.max_ticks) + " ticks";
            return r;
        }
        const auto& reply = *req.result;
        r.latency = req.completed_at - req.submitted_at;
        r.status = reply.status;
        if (!reply.committed) {
            r.outcome = reply.status == ledger::TxStatus::Denied ? Outcome::Denied : Outcome::Rejected;
            r.detail = ledger::to_string(reply.status);
            return r;
        }
        r.height = reply.height;
        known_height_ = std::max(known_height_, reply.height);
        who.seq = tx.seq;
        r.outcome = Outcome::Ok;
        last_data_ = reply.data;
        return r;
    }

    void push(ActionResult r) {
        last_ = r;
        report_.actions.push_back(std::move(r));
    }

    void do_register(const Action& a) {
        const auto& id = arg(a, 0);
        const auto& role = arg(a, 1);
        if (actors_.count(id) && actors_[id].registered) throw ScenarioError(a.line, "'" + id + "' already registered");
        if (!sim_.in_roster(id)) throw ScenarioError(a.line, "'" + id + "' is not in the sim roster");
        crypto::Rng rng(seed_material("actor/" + id));
        Actor act;
        act.id = id;
        act.self_key = crypto::gen_sym_key(rng);
        ledger::Transaction tx;
        if (role == "patient") {
            auto joined = identity::join_patient(id, rng);
            act.role = ledger::Role::Patient;
            act.keys = joined.identity.keys;
            act.patient = std::move(joined.identity);
            tx = joined.registration;
        } else if (role == "staff") {
            auto joined = identity::join_staff(id, a.args.size() > 2 ? a.args[2] : "", rng);
            act.role = ledger::Role::Staff;
            act.keys = joined.identity.keys;
            act.staff = std::move(joined.identity);
            tx = joined.registration;
        } else {
            throw ScenarioError(a.line, "register: role must be patient or staff");
        }
        auto r = submit(a, act, tx);
        if (r.outcome == Outcome::Ok) {
            act.registered = true;
            directory_.add({act.role, act.keys.public_key, a.args.size() > 2 ? a.args[2] : ""});
        }
        secrets_.emplace_back("signing key of " + id, Bytes(act.keys.private_key.bytes.begin(), act.keys.private_key.bytes.end()));
        secrets_.emplace_back("self key of " + id, Bytes(act.self_key.bytes.begin(), act.self_key.bytes.end()));
        actors_[id] = std::move(act);
        push(std::move(r));
    }

    void do_grant(const Action& a, bool revoke) {
        auto& p = actor(a, arg(a, 0), ledger::Role::Patient);
        auto& s = actor(a, arg(a, 1), ledger::Role::Staff);
        std::set<std::string> types;
        if (!revoke) types.insert(a.args.begin() + 2, a.args.end());
        auto it = a.opts.find("as");
        auto& signer = it == a.opts.end() ? p : actor(a, it->second);
        auto tx = ledger::make_signed_tx(signer.keys, signer.seq + 1,
                                         ledger::make_access_payload(p.keys.public_key, s.keys.public_key, types));
        auto r = submit(a, signer, tx);
        if (r.outcome == Outcome::Ok) {
            if (types.empty()) {
                if (auto k = p.patient->shared_keys.find(s.keys.public_key); k != p.patient->shared_keys.end()) {
                    p.retired_keys.push_back(k->second);
                    p.patient->shared_keys.erase(k);
                }
            } else if (!p.patient->shared_keys.count(s.keys.public_key)) {
                auto env = identity::share_sym_key(*p.patient, s.keys.public_key, directory_, rng_);
                auto key = identity::open_envelope(*s.staff, env);
                if (key) secrets_.emplace_back("record key " + p.id + "->" + s.id, Bytes(key->bytes.begin(), key->bytes.end()));
            }
        }
        push(std::move(r));
    }

    void do_put(const Action& a) {
        auto& p = actor(a, arg(a, 0), ledger::Role::Patient);
        const auto& type = arg(a, 1);
        const auto& text = arg(a, 2);
        crypto::SymmetricKey key = p.self_key;
        if (auto it = a.opts.find("for"); it != a.opts.end()) {
            auto& s = actor(a, it->second, ledger::Role::Staff);
            auto k = p.patient->shared_keys.find(s.keys.public_key);
            if (k == p.patient->shared_keys.end()) throw ScenarioError(a.line, "put: no key shared with " + s.id);
            key = k->second;
        } else if (p.patient->shared_keys.size() == 1) {
            key = p.patient->shared_keys.begin()->second;
        }
        auto c = crypto::encrypt(key, as_bytes(text), ledger::record_associated_data(p.keys.public_key, type), rng_);
        auto tx = ledger::make_signed_tx(p.keys, p.seq + 1, ledger::make_write_payload(p.keys.public_key, type, c));
        auto r = submit(a, p, tx);
        if (r.outcome == Outcome::Ok && last_data_ && last_data_->digest) {
            last_digest_ = *last_data_->digest;
            digests_[{p.id, type}] = *last_data_->digest;
            r.detail = last_data_->digest->hex();
        }
        plaintexts_.emplace_back(text);
        push(std::move(r));
    }

    void do_get(const Action& a) {
        auto& who = actor(a, arg(a, 0));
        auto& p = actor(a, arg(a, 1), ledger::Role::Patient);
        const auto& type = arg(a, 2);
        crypto::Digest d{};
        if (auto it = a.opts.find("digest"); it != a.opts.end()) {
            if (it->second == "last") {
                if (!last_digest_) throw ScenarioError(a.line, "get: nothing written yet");
                d = *last_digest_;
            } else {
                auto parsed = crypto::Digest::from_hex(it->second);
                if (!parsed) throw ScenarioError(a.line, "get: malformed digest");
                d = *parsed;
            }
        } else if (auto it2 = digests_.find({p.id, type}); it2 != digests_.end()) {
            d = it2->second;
        }
        auto tx = ledger::make_signed_tx(who.keys, who.seq + 1, ledger::make_read_payload(p.keys.public_key, type, d));
        last_plaintext_.reset();
        last_bad_holders_ = 0;
        auto r = submit(a, who, tx);
        if (r.outcome == Outcome::Ok && last_data_) {
            last_bad_holders_ = last_data_->bad_holders.size();
            switch (last_data_->outcome) {
                case ledger::DataOutcome::IntegrityAlarm: r.outcome = Outcome::IntegrityAlarm; break;
                case ledger::DataOutcome::NotIndexed: r.outcome = Outcome::NotIndexed; break;
                case ledger::DataOutcome::Served: {
                    auto pt = decrypt_for(who, p, type, *last_data_->ciphertext);
                    if (pt) last_plaintext_ = std::string(pt->begin(), pt->end());
                    else r.outcome = Outcome::Undecryptable;
                    break;
                }
                default: break;
            }
            if (!last_data_->bad_holders.empty()) {
                std::string list;
                for (const auto& h : last_data_->bad_holders) list += (list.empty() ? "" : ",") + h;
                r.detail = "bad holders: " + list;
            }
        }
        push(std::move(r));
    }

    std::optional<Bytes> decrypt_for(const Actor& who, const Actor& p, const std::string& type, const crypto::Ciphertext& c) {
        auto ad = ledger::record_associated_data(p.keys.public_key, type);
        std::vector<crypto::SymmetricKey> keys;
        if (who.staff) {
            if (auto it = who.staff->received_keys.find(p.keys.public_key); it != who.staff->received_keys.end())
                keys.push_back(it->second);
        } else {
            keys.push_back(who.self_key);
            for (const auto& [_, k] : who.patient->shared_keys) keys.push_back(k);
            keys.insert(keys.end(), who.retired_keys.begin(), who.retired_keys.end());
        }
        for (const auto& k : keys)
            if (auto pt = crypto::decrypt(k, c, ad)) return pt;
        return std::nullopt;
    }

    void do_fault(const Action& a) {
        const auto& kind = arg(a, 0);
        sim::Fault f;
        auto until = [&] { return a.opts.count("until") ? parse_u64(a.line, "until", a.opts.at("until")) : 0; };
        try {
            if (kind == "tamper-store") {
                f.kind = sim::FaultKind::TamperStore;
                auto target = a.args.size() > 1 ? a.args[1] : "last";
                if (target == "last") {
                    if (!last_digest_) throw ScenarioError(a.line, "tamper-store: nothing written yet");
                    f.target = last_digest_->hex();
                } else {
                    f.target = target;
                }
                f.arg = a.opts.count("holder") ? a.opts.at("holder") : "local";
            } else if (kind == "crash" || kind == "recover") {
                f.kind = kind == "crash" ? sim::FaultKind::Crash : sim::FaultKind::Recover;
                f.target = arg(a, 1);
                f.amount = until();
            } else if (kind == "partition") {
                f.kind = sim::FaultKind::Partition;
                f.arg = arg(a, 1);
                f.amount = until();
            } else if (kind == "flood") {
                f.kind = sim::FaultKind::Flood;
                f.target = arg(a, 1);
                f.amount = a.opts.count("rate") ? parse_u64(a.line, "rate", a.opts.at("rate"))
                                                : 100ULL * cfg_.rate_limit;
                flood_nodes_.insert(f.target);
                if (opts_.skip_floods) return;
            } else if (kind == "alter-block") {
                f.kind = sim::FaultKind::AlterBlock;
                f.target = arg(a, 1);
            } else {
                throw ScenarioError(a.line, "unknown fault '" + kind + "'");
            }
            sim_.inject(f);
        } catch (const sim::FaultError& e) {
            throw ScenarioError(a.line, e.what());
        }
    }

    // An outsider key claims to be replica 0 and pushes a fabricated chain.
    void do_forge(const Action& a) {
        const auto& from = arg(a, 0);
        if (!sim_.in_roster(from)) throw ScenarioError(a.line, "forge-chain: '" + from + "' is not in the roster");
        auto blocks = a.opts.count("blocks") ? parse_u64(a.line, "blocks", a.opts.at("blocks")) : 3;
        crypto::Rng rng(seed_material("forger/" + from));
        auto forger = crypto::gen_sig_keypair(rng);
        const auto& honest = sim_.replica(*sim_.honest().begin());
        auto tip = honest.ledger().tip();
        pbft::FetchReply reply;
        for (std::uint64_t i = 0; i < blocks; ++i) {
            auto fake = ledger::make_signed_tx(forger, i + 1, ledger::RegisterPayload{ledger::Role::Staff, "forged"});
            auto b = ledger::make_block(tip, sim_.now(), 0, {fake});
            tip = {b.header.height, b.hash()};
            pbft::CommitCert cert;
            for (pbft::ReplicaId r = 0; r < sim_.replica_count(); ++r)
                cert.commits.push_back(pbft::sign_message(
                    r, pbft::Vote{pbft::MsgKind::Commit, honest.view(), b.header.height, b.hash()}, forger.private_key));
            reply.blocks.push_back(b);
            reply.certs.push_back(std::move(cert));
        }
        const auto view = honest.view();
        const auto primary = static_cast<pbft::ReplicaId>(view % sim_.replica_count());
        auto pp = std::make_shared<const pbft::Message>(pbft::sign_message(
            primary, pbft::PrePrepare{view, reply.blocks.front().header.height, reply.blocks.front()}, forger.private_key));
        auto fr = std::make_shared<const pbft::Message>(pbft::sign_message(primary, std::move(reply), forger.private_key));
        for (pbft::ReplicaId r = 0; r < sim_.replica_count(); ++r) {
            sim_.send(from, sim::replica_name(r), pp);
            sim_.send(from, sim::replica_name(r), fr);
        }
        sim_.run_until([] { return false; }, cfg_.delay_max + 1);
        ActionResult res;
        res.line = a.line;
        res.text = a.text;
        res.detail = std::to_string(blocks) + " forged blocks sent";
        push(std::move(res));
    }

    void do_foreign(const Action& a) {
        const auto& ghost = arg(a, 0);
        if (sim_.in_roster(ghost)) throw ScenarioError(a.line, "send-foreign: '" + ghost + "' is in the roster");
        auto count = a.opts.count("count") ? parse_u64(a.line, "count", a.opts.at("count")) : 10;
        crypto::Rng rng(seed_material("ghost/" + ghost));
        auto keys = crypto::gen_sig_keypair(rng);
        for (std::uint64_t i = 0; i < count; ++i) {
            auto tx = ledger::make_signed_tx(keys, i + 1, ledger::RegisterPayload{ledger::Role::Patient, ""});
            for (pbft::ReplicaId r = 0; r < sim_.replica_count(); ++r)
                if (sim_.send(ghost, sim::replica_name(r), sim::ClientRequest{tx, 0}) == sim::SendResult::UnknownNode)
                    ++foreign_rejected_;
                else
                    ++foreign_accepted_;
        }
        ActionResult res;
        res.line = a.line;
        res.text = a.text;
        res.detail = std::to_string(foreign_rejected_) + " foreign messages rejected";
        push(std::move(res));
    }

    void do_tamper_blocks(const Action& a) {
        auto count = a.opts.count("count") ? parse_u64(a.line, "count", a.opts.at("count")) : 100;
        const auto& chain = sim_.replica(*sim_.honest().begin()).chain();
        if (chain.empty()) throw ScenarioError(a.line, "tamper-blocks: chain is empty");
        auto stats = tamper_chain(chain, count, mt_);
        tamper_attempted_ += stats.first;
        tamper_rejected_ += stats.second;
        ActionResult res;
        res.line = a.line;
        res.text = a.text;
        res.detail = std::to_string(stats.second) + "/" + std::to_string(stats.first) + " modified chains rejected";
        push(std::move(res));
    }

    // ---- expectations ------------------------------------------------------

    void expect(const Action& a) {
        ExpectResult e;
        e.line = a.line;
        e.text = a.text;
        const auto& what = arg(a, 0);
        auto numeric = [&](double value) {
            const auto& op = arg(a, 1);
            if (!is_comparator(op)) throw ScenarioError(a.line, "expect " + what + ": bad comparator '" + op + "'");
            double rhs = parse_double(a.line, what, arg(a, 2));
            e.passed = compare(op, value, rhs);
            e.detail = what + " = " + fmt(value);
        };
        if (what == "last") {
            auto o = parse_outcome(arg(a, 1));
            if (!o) throw ScenarioError(a.line, "expect last: unknown outcome '" + a.args[1] + "'");
            std::optional<ledger::TxStatus> st;
            if (a.args.size() > 2) {
                st = parse_status(a.args[2]);
                if (!st) throw ScenarioError(a.line, "expect last: unknown status '" + a.args[2] + "'");
            }
            e.passed = last_ && last_->outcome == *o && (!st || last_->status == *st);
            e.detail = last_ ? std::string("last = ") + to_string(last_->outcome) + " (" + ledger::to_string(last_->status) + ")"
                             : "no action yet";
        } else if (what == "committed-height") {
            numeric(static_cast<double>(sim_.honest_height()));
        } else if (what == "view-changes") {
            numeric(static_cast<double>(sim_.view_changes()));
        } else if (what == "misbehavior") {
            numeric(static_cast<double>(misbehavior()));
        } else if (what == "bad-holders") {
            numeric(static_cast<double>(last_bad_holders_));
        } else if (what == "audit-events") {
            auto& p = actor(a, arg(a, 1), ledger::Role::Patient);
            Action shifted = a;
            shifted.args.erase(shifted.args.begin() + 1);
            const auto& op = arg(shifted, 1);
            double rhs = parse_double(a.line, what, arg(shifted, 2));
            auto n = ledger::audit_trail(sim_.replica(*sim_.honest().begin()).ledger(), p.keys.public_key).size();
            e.passed = is_comparator(op) && compare(op, static_cast<double>(n), rhs);
            e.detail = "audit events = " + std::to_string(n);
        } else if (what == "safety") {
            e.passed = sim_.safety_holds();
            e.detail = e.passed ? "honest replicas agree at every height" : "honest replicas diverged";
        } else if (what == "replay-matches") {
            e.passed = sim_.replay_matches();
            e.detail = e.passed ? "replay digest equals live digest" : "replay digest differs";
        } else if (what == "all-committed") {
            std::uint64_t open = 0;
            for (auto id : request_ids_) open += sim_.request(id).done() ? 0 : 1;
            e.passed = open == 0;
            e.detail = std::to_string(open) + " requests without a result";
        } else if (what == "flood-rejected") {
            e.passed = !flood_nodes_.empty();
            std::uint64_t limited = 0;
            for (const auto& n : flood_nodes_) {
                auto it = sim_.rate_limited_by_sender().find(n);
                auto c = it == sim_.rate_limited_by_sender().end() ? 0 : it->second;
                limited += c;
                e.passed = e.passed && c > 0;
            }
            e.passed = e.passed && limit_respected();
            e.detail = std::to_string(limited) + " flood requests rate-limited";
        } else if (what == "rate-limit-respected") {
            e.passed = limit_respected();
            e.detail = e.passed ? "no sender exceeded its window budget" : "window budget exceeded";
        } else if (what == "foreign-rejected") {
            e.passed = foreign_rejected_ > 0 && foreign_accepted_ == 0;
            e.detail = std::to_string(foreign_rejected_) + " rejected, " + std::to_string(foreign_accepted_) + " scheduled";
        } else if (what == "tamper-rejected") {
            e.passed = tamper_attempted_ > 0 && tamper_rejected_ == tamper_attempted_;
            e.detail = std::to_string(tamper_rejected_) + "/" + std::to_string(tamper_attempted_) + " rejected";
        } else if (what == "plaintext") {
            e.passed = last_plaintext_ && *last_plaintext_ == arg(a, 1);
            e.detail = last_plaintext_ ? "plaintext = \"" + *last_plaintext_ + "\"" : "no plaintext recovered";
        } else if (what == "chain-signatures-valid") {
            e.passed = true;
            for (auto i : sim_.honest())
                for (const auto& b : sim_.replica(i).chain())
                    for (const auto& tx : b.txs) e.passed = e.passed && ledger::verify_tx_signature(tx);
            e.detail = e.passed ? "every committed transaction verifies" : "unsigned transaction committed";
        } else if (what == "no-plaintext-leak") {
            auto findings = privacy_scan();
            e.passed = findings.empty();
            e.detail = std::to_string(findings.size()) + " findings";
        } else if (what == "latency-ratio") {
            deferred_.push_back(a);
            return;
        } else {
            throw ScenarioError(a.line, "unknown expectation '" + what + "'");
        }
        report_.expectations.push_back(std::move(e));
    }

    bool limit_respected() const {
        for (const auto& [_, n] : sim_.window_counts())
            if (n > cfg_.rate_limit) return false;
        return true;
    }

    std::uint64_t misbehavior() const {
        std::uint64_t m = 0;
        for (auto i : sim_.honest()) m += sim_.replica(i).stats().misbehavior;
        return m;
    }

    std::vector<PrivacyFinding> privacy_scan() const {
        std::vector<std::pair<std::string, Bytes>> artifacts;
        for (auto i : sim_.honest()) {
            const auto& r = sim_.replica(i);
            artifacts.emplace_back("ledger of r" + std::to_string(i), r.ledger().encode());
            artifacts.emplace_back("chain of r" + std::to_string(i), ledger::encode_chain(r.chain()));
        }
        Bytes trace;
        for (const auto& line : sim_.trace()) {
            trace.insert(trace.end(), line.begin(), line.end());
            trace.push_back('\n');
        }
        artifacts.emplace_back("trace", std::move(trace));
        sim_.store().for_each_raw([&](const std::string& holder, const crypto::Digest& d, const Bytes& bytes) {
            artifacts.emplace_back("store " + holder + "/" + d.hex(), bytes);
        });
        auto secrets = secrets_;
        for (const auto& t : plaintexts_) secrets.emplace_back("plaintext \"" + t + "\"", Bytes(t.begin(), t.end()));
        return scan_for_secrets(artifacts, secrets);
    }

    void finish() {
        auto& m = report_.metrics;
        m.ticks = sim_.now();
        m.committed_height = sim_.honest_height();
        m.view_changes = sim_.view_changes();
        m.requests = request_ids_.size();
        std::uint64_t total_latency = 0;
        for (auto id : request_ids_) {
            const auto& req = sim_.request(id);
            if (!req.done()) {
                ++m.timeouts;
                continue;
            }
            if (req.result->committed) ++m.committed;
            else ++m.rejected;
            auto lat = req.completed_at - req.submitted_at;
            total_latency += lat;
            m.max_latency = std::max(m.max_latency, lat);
        }
        auto done = m.requests - m.timeouts;
        m.mean_latency = done ? static_cast<double>(total_latency) / static_cast<double>(done) : 0.0;
        for (const auto& [_, n] : sim_.rate_limited_by_sender()) m.rate_limited += n;
        m.foreign_rejected = foreign_rejected_;
        m.misbehavior = misbehavior();
        m.messages_sent = sim_.stats().sent;
        m.trace_hash = sim_.trace_hash();
        report_.safety = sim_.safety_holds();
        report_.replay_ok = sim_.replay_matches();
        report_.privacy = privacy_scan();

        if (!opts_.compute_baseline) deferred_.clear();
        for (const auto& a : deferred_) {
            ExpectResult e;
            e.line = a.line;
            e.text = a.text;
            if (!m.baseline_latency) {
                RunOptions base = opts_;
                base.skip_floods = true;
                base.compute_baseline = false;
                base.trace_out = nullptr;
                m.baseline_latency = run_scenario(sc_, base).metrics.mean_latency;
            }
            const auto& op = arg(a, 1);
            double rhs = parse_double(a.line, "latency-ratio", arg(a, 2));
            double ratio = *m.baseline_latency > 0 ? m.mean_latency / *m.baseline_latency : 0.0;
            e.passed = is_comparator(op) && compare(op, ratio, rhs);
            e.detail = "latency " + fmt(m.mean_latency) + " vs baseline " + fmt(*m.baseline_latency) + ", ratio " + fmt(ratio);
            report_.expectations.push_back(std::move(e));
        }
        if (opts_.trace_out) *opts_.trace_out = sim_.trace();
    }

public:
    static std::pair<std::uint64_t, std::uint64_t> tamper_chain(const std::vector<ledger::Block>& chain,
                                                                std::uint64_t count, std::mt19937_64& rng);

private:
    const Scenario& sc_;
    RunOptions opts_;
    sim::SimConfig cfg_;
    sim::Simulation sim_;
    crypto::Rng rng_;
    std::mt19937_64 mt_;
    Report report_;

    std::map<std::string, Actor> actors_;
    identity::KeyDirectory directory_;
    std::vector<std::uint64_t> request_ids_;
    std::uint64_t known_height_ = 0;
    std::optional<ActionResult> last_;
    std::optional<ledger::DataResult> last_data_;
    std::optional<std::string> last_plaintext_;
    std::size_t last_bad_holders_ = 0;
    std::optional<crypto::Digest> last_digest_;
    std::map<std::pair<std::string, std::string>, crypto::Digest> digests_;
    std::set<std::string> flood_nodes_;
    std::uint64_t foreign_rejected_ = 0;
    std::uint64_t foreign_accepted_ = 0;
    std::uint64_t tamper_attempted_ = 0;
    std::uint64_t tamper_rejected_ = 0;
    std::vector<Action> deferred_;
    std::vector<std::pair<std::string, Bytes>> secrets_;
    std::vector<std::string> plaintexts_;
};

// Returns (attempted, rejected). Each attempt changes one block and replays the
// modified chain; header-only or reordering edits need a successor block, since
// on their own they produce a different but well-formed block.
std::pair<std::uint64_t, std::uint64_t> Engine::tamper_chain(const std::vector<ledger::Block>& chain,
                                                             std::uint64_t count, std::mt19937_64& rng) {
    std::uint64_t attempted = 0, rejected = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto copy = chain;
        auto idx = rng() % copy.size();
        auto& b = copy[idx];
        const bool has_successor = idx + 1 < copy.size();
        const auto original = b.hash();
        auto reroot = [&] { b.header.tx_root = ledger::compute_tx_root(b.txs); };
        if (b.txs.empty()) continue;
        auto kind = rng() % (has_successor ? 11 : 7);
        auto& tx = b.txs[rng() % b.txs.size()];
        switch (kind) {
            case 0: tx.seq += 1 + rng() % 3; reroot(); break;
            case 1: tx.signature.s[rng() % tx.signature.s.size()] ^= 0x01; reroot(); break;
            case 2:
                std::visit([&](auto& p) {
                    using P = std::decay_t<decltype(p)>;
                    if constexpr (std::is_same_v<P, ledger::AccessPayload>) p.policy.allowed_types.insert("forged type");
                    else if constexpr (std::is_same_v<P, ledger::DataPayload>) p.content_digest.bytes[0] ^= 0x80;
                    else p.profile += "!";
                }, tx.payload);
                reroot();
                break;
            case 3: b.txs.push_back(b.txs.front()); reroot(); break;
            case 4: b.header.tx_root.bytes[rng() % 32] ^= 0x01; break;
            case 5: b.header.prev_hash.bytes[rng() % 32] ^= 0x01; break;
            case 6: b.header.height += 1 + rng() % 3; break;
            case 7: b.header.timestamp += 1 + rng() % 100; break;
            case 8: b.header.proposer += 1; break;
            case 9:
                if (b.txs.size() > 1) std::swap(b.txs.front(), b.txs.back());
                else b.txs.clear();
                reroot();
                break;
            default: b.txs.erase(b.txs.begin() + static_cast<std::ptrdiff_t>(rng() % b.txs.size())); reroot(); break;
        }
        if (b.hash() == original && b.txs == chain[idx].txs) continue;
        ++attempted;
        try {
            ledger::replay(copy);
        } catch (const ledger::ChainError&) {
            ++rejected;
        }
    }
    return {attempted, rejected};
}

}  // namespace

const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::None: return "none";
        case Outcome::Ok: return "ok";
        case Outcome::Denied: return "denied";
        case Outcome::Rejected: return "rejected";
        case Outcome::IntegrityAlarm: return "integrity-alarm";
        case Outcome::NotIndexed: return "not-indexed";
        case Outcome::Undecryptable: return "undecryptable";
        case Outcome::Timeout: return "timeout";
    }
    return "unknown";
}

namespace {

struct Word {
    std::string text;
    bool quoted = false;
};

std::vector<Word> split_words(const std::string& line, int lineno) {
    std::vector<Word> out;
    std::string cur;
    bool in_token = false, quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '\\' && i + 1 < line.size() && (line[i + 1] == '"' || line[i + 1] == '\\')) cur += line[++i];
            else if (c == '"') quoted = false;
            else cur += c;
        } else if (c == '"') {
            quoted = true;
            in_token = true;
            was_quoted = true;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            if (in_token) out.push_back({std::move(cur), was_quoted});
            cur.clear();
            in_token = false;
            was_quoted = false;
        } else if (c == '#' && !in_token) {
            break;
        } else {
            cur += c;
            in_token = true;
        }
    }
    if (quoted) throw ScenarioError(lineno, "unterminated quote");
    if (in_token) out.push_back({std::move(cur), was_quoted});
    return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& line, int lineno) {
    std::vector<std::string> out;
    for (auto& w : split_words(line, lineno)) out.push_back(std::move(w.text));
    return out;
}

Scenario parse_scenario(const std::string& text) {
    Scenario sc;
    enum { Header, Sim, Script } section = Header;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line == "[sim]") {
            section = Sim;
            continue;
        }
        if (line == "[script]") {
            section = Script;
            continue;
        }
        if (line.front() == '[') throw ScenarioError(lineno, "unknown section " + line);
        if (section != Script) {
            if (auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ScenarioError(lineno, "expected key = value");
            auto key = trim(line.substr(0, eq));
            auto value = trim(line.substr(eq + 1));
            if (section == Header) {
                if (key == "name") sc.name = value;
                else if (key == "description") sc.description = value;
                else throw ScenarioError(lineno, "unknown header key '" + key + "'");
            } else {
                try {
                    sim::apply_setting(sc.sim, key, value);
                } catch (const sim::ConfigError& e) {
                    throw ScenarioError(lineno, e.what());
                }
            }
            continue;
        }
        auto words = split_words(line, lineno);
        if (words.empty()) continue;
        Action a;
        a.line = lineno;
        a.text = line;
        a.verb = words.front().text;
        for (std::size_t i = 1; i < words.size(); ++i) {
            const auto& w = words[i].text;
            auto eq = w.find('=');
            if (eq != std::string::npos && eq > 0 && !words[i].quoted && a.verb != "expect")
                a.opts[w.substr(0, eq)] = w.substr(eq + 1);
            else
                a.args.push_back(w);
        }
        sc.script.push_back(std::move(a));
    }
    if (sc.name.empty()) sc.name = "unnamed";
    return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ScenarioError(0, "cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    auto sc = parse_scenario(ss.str());
    if (sc.name == "unnamed") sc.name = path.stem().string();
    return sc;
}

bool Report::passed() const {
    return std::all_of(expectations.begin(), expectations.end(), [](const auto& e) { return e.passed; });
}

Report run_scenario(const Scenario& sc, const RunOptions& opts) {
    return Engine(sc, opts).run();
}

std::pair<std::uint64_t, std::uint64_t> tamper_chain(const std::vector<ledger::Block>& chain, std::uint64_t count,
                                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Engine::tamper_chain(chain, count, rng);
}

std::vector<PrivacyFinding> scan_for_secrets(const std::vector<std::pair<std::string, Bytes>>& artifacts,
                                             const std::vector<std::pair<std::string, Bytes>>& secrets) {
    std::vector<PrivacyFinding> out;
    for (const auto& [sname, secret] : secrets) {
        if (secret.empty()) continue;
        std::boyer_moore_horspool_searcher search(secret.begin(), secret.end());
        for (const auto& [aname, bytes] : artifacts)
            if (std::search(bytes.begin(), bytes.end(), search) != bytes.end()) out.push_back({aname, sname});
    }
    return out;
}

}  // namespace medchain::scenario
