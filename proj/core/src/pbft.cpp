#include "medchain/pbft.hpp"

#include <algorithm>

namespace medchain::pbft {

namespace {

constexpr std::string_view kDomain = "medchain/pbft/v1";
constexpr std::size_t kFutureHeights = 8;
constexpr std::size_t kFetchBatch = 16;
constexpr std::uint32_t kMaxBackoff = 6;

template <class T>
struct Tag;
template <>
struct Tag<PrePrepare> {
    static MsgKind of(const PrePrepare&) { return MsgKind::PrePrepare; }
};
template <>
struct Tag<Vote> {
    static MsgKind of(const Vote& v) { return v.kind; }
};
template <>
struct Tag<ViewChange> {
    static MsgKind of(const ViewChange&) { return MsgKind::ViewChange; }
};
template <>
struct Tag<NewView> {
    static MsgKind of(const NewView&) { return MsgKind::NewView; }
};
template <>
struct Tag<FetchRequest> {
    static MsgKind of(const FetchRequest&) { return MsgKind::FetchRequest; }
};
template <>
struct Tag<FetchReply> {
    static MsgKind of(const FetchReply&) { return MsgKind::FetchReply; }
};

// ---- encoding ------------------------------------------------------------

template <class T>
Bytes body_bytes(const T& body);

template <class T>
Bytes signed_bytes(const Signed<T>& m) {
    ByteWriter w;
    w.u32(m.sender).var(body_bytes(m.body)).fixed(m.signature.encode());
    return std::move(w).take();
}

void put_cert(ByteWriter& w, const CommitCert& c) {
    w.u32(static_cast<std::uint32_t>(c.commits.size()));
    for (const auto& v : c.commits) w.var(signed_bytes(v));
}

void put_prepared(ByteWriter& w, const PreparedCert& c) {
    w.var(signed_bytes(c.pre_prepare));
    w.u32(static_cast<std::uint32_t>(c.prepares.size()));
    for (const auto& v : c.prepares) w.var(signed_bytes(v));
}

template <>
Bytes body_bytes(const PrePrepare& b) {
    ByteWriter w;
    w.u64(b.view).u64(b.height).var(b.block.encode());
    return std::move(w).take();
}

template <>
Bytes body_bytes(const Vote& v) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(v.kind)).u64(v.view).u64(v.height).fixed(v.digest.bytes);
    return std::move(w).take();
}

template <>
Bytes body_bytes(const ViewChange& v) {
    ByteWriter w;
    w.u64(v.new_view).u64(v.committed_height);
    w.u8(v.commit_proof ? 1 : 0);
    if (v.commit_proof) {
        ByteWriter c;
        put_cert(c, *v.commit_proof);
        w.var(c.bytes());
    }
    w.u8(v.prepared ? 1 : 0);
    if (v.prepared) {
        ByteWriter c;
        put_prepared(c, *v.prepared);
        w.var(c.bytes());
    }
    return std::move(w).take();
}

template <>
Bytes body_bytes(const NewView& v) {
    ByteWriter w;
    w.u64(v.view).u32(static_cast<std::uint32_t>(v.view_changes.size()));
    for (const auto& vc : v.view_changes) w.var(signed_bytes(vc));
    w.u8(v.pre_prepare ? 1 : 0);
    if (v.pre_prepare) w.var(signed_bytes(*v.pre_prepare));
    return std::move(w).take();
}

template <>
Bytes body_bytes(const FetchRequest& r) {
    ByteWriter w;
    w.u64(r.from_height);
    return std::move(w).take();
}

template <>
Bytes body_bytes(const FetchReply& r) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(r.blocks.size()));
    for (std::size_t i = 0; i < r.blocks.size(); ++i) {
        w.var(r.blocks[i].encode());
        ByteWriter c;
        if (i < r.certs.size()) put_cert(c, r.certs[i]);
        w.var(c.bytes());
    }
    return std::move(w).take();
}

// ---- decoding ------------------------------------------------------------

template <class T>
T read_body(ByteView bytes);

template <class T>
Signed<T> read_signed(ByteView bytes) {
    ByteReader r(bytes);
    Signed<T> m;
    m.sender = r.u32();
    m.body = read_body<T>(r.var());
    m.signature = Signature::decode(r.fixed(Signature::kSize));
    r.expect_done();
    return m;
}

CommitCert read_cert(ByteView bytes) {
    ByteReader r(bytes);
    CommitCert c;
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) c.commits.push_back(read_signed<Vote>(r.var()));
    r.expect_done();
    return c;
}

PreparedCert read_prepared(ByteView bytes) {
    ByteReader r(bytes);
    PreparedCert c;
    c.pre_prepare = read_signed<PrePrepare>(r.var());
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) c.prepares.push_back(read_signed<Vote>(r.var()));
    r.expect_done();
    return c;
}

bool read_flag(ByteReader& r) {
    auto f = r.u8();
    if (f > 1) throw DecodeError("flag must be 0 or 1");
    return f == 1;
}

template <>
PrePrepare read_body(ByteView bytes) {
    ByteReader r(bytes);
    PrePrepare p;
    p.view = r.u64();
    p.height = r.u64();
    p.block = Block::decode(r.var());
    r.expect_done();
    return p;
}

template <>
Vote read_body(ByteView bytes) {
    ByteReader r(bytes);
    Vote v;
    auto k = r.u8();
    if (k != static_cast<std::uint8_t>(MsgKind::Prepare) && k != static_cast<std::uint8_t>(MsgKind::Commit))
        throw DecodeError("vote kind must be prepare or commit");
    v.kind = static_cast<MsgKind>(k);
    v.view = r.u64();
    v.height = r.u64();
    v.digest.bytes = r.array<Digest::kSize>();
    r.expect_done();
    return v;
}

template <>
ViewChange read_body(ByteView bytes) {
    ByteReader r(bytes);
    ViewChange v;
    v.new_view = r.u64();
    v.committed_height = r.u64();
    if (read_flag(r)) v.commit_proof = read_cert(r.var());
    if (read_flag(r)) v.prepared = read_prepared(r.var());
    r.expect_done();
    return v;
}

template <>
NewView read_body(ByteView bytes) {
    ByteReader r(bytes);
    NewView v;
    v.view = r.u64();
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) v.view_changes.push_back(read_signed<ViewChange>(r.var()));
    if (read_flag(r)) v.pre_prepare = read_signed<PrePrepare>(r.var());
    r.expect_done();
    return v;
}

template <>
FetchRequest read_body(ByteView bytes) {
    ByteReader r(bytes);
    FetchRequest f{r.u64()};
    r.expect_done();
    return f;
}

template <>
FetchReply read_body(ByteView bytes) {
    ByteReader r(bytes);
    FetchReply f;
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        f.blocks.push_back(Block::decode(r.var()));
        f.certs.push_back(read_cert(r.var()));
    }
    r.expect_done();
    return f;
}

bool is_vote(const Signed<Vote>& v, MsgKind kind, std::uint64_t view, std::uint64_t height, const Digest& d) {
    return v.body.kind == kind && v.body.view == view && v.body.height == height && v.body.digest == d;
}

}  // namespace

const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::PrePrepare: return "pre-prepare";
        case MsgKind::Prepare: return "prepare";
        case MsgKind::Commit: return "commit";
        case MsgKind::ViewChange: return "view-change";
        case MsgKind::NewView: return "new-view";
        case MsgKind::FetchRequest: return "fetch-request";
        case MsgKind::FetchReply: return "fetch-reply";
    }
    return "unknown";
}

const char* to_string(Behavior b) {
    switch (b) {
        case Behavior::Honest: return "honest";
        case Behavior::Equivocate: return "equivocate";
        case Behavior::Mute: return "mute";
        case Behavior::Delay: return "delay";
        case Behavior::Alter: return "alter";
    }
    return "unknown";
}

std::optional<Behavior> parse_behavior(std::string_view s) {
    for (auto b : {Behavior::Honest, Behavior::Equivocate, Behavior::Mute, Behavior::Delay, Behavior::Alter})
        if (s == to_string(b)) return b;
    return std::nullopt;
}

MsgKind kind_of(const Message& m) {
    return std::visit([](const auto& s) { return Tag<std::decay_t<decltype(s.body)>>::of(s.body); }, m);
}

ReplicaId sender_of(const Message& m) {
    return std::visit([](const auto& s) { return s.sender; }, m);
}

template <class T>
Bytes signing_bytes(const Signed<T>& m) {
    ByteWriter w;
    w.var(kDomain).u8(static_cast<std::uint8_t>(Tag<T>::of(m.body))).u32(m.sender).var(body_bytes(m.body));
    return std::move(w).take();
}

template <class T>
Signed<T> sign_message(ReplicaId sender, T body, const crypto::PrivateKey& key) {
    Signed<T> m{sender, std::move(body), {}};
    m.signature = crypto::sign(key, signing_bytes(m));
    return m;
}

template <class T>
bool verify_message(const Signed<T>& m, const std::vector<PublicKey>& validators) {
    if (m.sender >= validators.size()) return false;
    return crypto::verify_cached(validators[m.sender], signing_bytes(m), m.signature);
}

#define MEDCHAIN_PBFT_INSTANTIATE(T)                                                        \
    template Bytes signing_bytes<T>(const Signed<T>&);                                      \
    template Signed<T> sign_message<T>(ReplicaId, T, const crypto::PrivateKey&);            \
    template bool verify_message<T>(const Signed<T>&, const std::vector<PublicKey>&);

MEDCHAIN_PBFT_INSTANTIATE(PrePrepare)
MEDCHAIN_PBFT_INSTANTIATE(Vote)
MEDCHAIN_PBFT_INSTANTIATE(ViewChange)
MEDCHAIN_PBFT_INSTANTIATE(NewView)
MEDCHAIN_PBFT_INSTANTIATE(FetchRequest)
MEDCHAIN_PBFT_INSTANTIATE(FetchReply)
#undef MEDCHAIN_PBFT_INSTANTIATE

Bytes encode_message(const Message& m) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(m.index()));
    std::visit([&](const auto& s) { w.fixed(signed_bytes(s)); }, m);
    return std::move(w).take();
}

Message decode_message(ByteView bytes) {
    if (bytes.empty()) throw DecodeError("empty message");
    auto rest = bytes.subspan(1);
    switch (bytes[0]) {
        case 0: return read_signed<PrePrepare>(rest);
        case 1: return read_signed<Vote>(rest);
        case 2: return read_signed<ViewChange>(rest);
        case 3: return read_signed<NewView>(rest);
        case 4: return read_signed<FetchRequest>(rest);
        case 5: return read_signed<FetchReply>(rest);
        default: throw DecodeError("unknown consensus message tag");
    }
}

Digest message_digest(const Message& m) {
    return crypto::hash(encode_message(m));
}

bool verify_commit_cert(const CommitCert& cert, std::uint64_t height, const Digest& digest,
                        const std::vector<PublicKey>& validators) {
    QuorumParams q{static_cast<std::uint32_t>(validators.size())};
    if (cert.commits.empty()) return false;
    const auto view = cert.commits.front().body.view;
    std::set<ReplicaId> senders;
    for (const auto& c : cert.commits) {
        if (!is_vote(c, MsgKind::Commit, view, height, digest)) return false;
        if (!senders.insert(c.sender).second) return false;
        if (!verify_message(c, validators)) return false;
    }
    return senders.size() >= q.quorum();
}

bool verify_prepared_cert(const PreparedCert& cert, const std::vector<PublicKey>& validators) {
    QuorumParams q{static_cast<std::uint32_t>(validators.size())};
    const auto& pp = cert.pre_prepare;
    if (pp.sender != q.primary(pp.body.view) || pp.body.block.header.height != pp.body.height) return false;
    if (!verify_message(pp, validators)) return false;
    const auto d = pp.body.block.hash();
    std::set<ReplicaId> senders;
    for (const auto& v : cert.prepares) {
        if (!is_vote(v, MsgKind::Prepare, pp.body.view, pp.body.height, d)) return false;
        if (v.sender == pp.sender || !senders.insert(v.sender).second) return false;
        if (!verify_message(v, validators)) return false;
    }
    return senders.size() >= 2 * q.f();
}

void Output::append(Output&& other) {
    for (auto& m : other.messages) messages.push_back(std::move(m));
    for (auto& c : other.commits) commits.push_back(std::move(c));
    for (auto& r : other.rejected) rejected.push_back(std::move(r));
}

// ---- replica ---------------------------------------------------------------

Replica::Replica(ReplicaId id, SigningKeyPair keys, ReplicaConfig config, store::ContentStore* store)
    : id_(id), keys_(std::move(keys)), cfg_(std::move(config)), store_(store) {
    q_.n = static_cast<std::uint32_t>(cfg_.validators.size());
    if (q_.n < 4 || id_ >= q_.n || cfg_.validators[id_] != keys_.public_key)
        throw std::invalid_argument("replica key does not match its slot in the validator set");
}

void Replica::restore(const std::vector<Block>& history) {
    if (!chain_.empty() || view_ != 0) throw std::logic_error("restore: replica already running");
    state_ = ledger::replay(history);
    chain_ = history;
    certs_.assign(history.size(), CommitCert{});
    genesis_height_ = history.size();
}

bool Replica::has_pending_work() const {
    return !pool_.empty() || !slot_.blocks.empty();
}

template <class T>
MessagePtr Replica::make(T body) {
    return std::make_shared<const Message>(sign_message(id_, std::move(body), keys_.private_key));
}

void Replica::send(Output& out, MessagePtr m, std::optional<ReplicaId> to) {
    out.messages.push_back({to, std::move(m)});
}

SubmitResult Replica::submit(const Transaction& tx, std::uint64_t now) {
    SubmitResult r;
    const auto id = tx.id();
    if (auto it = committed_txs_.find(id); it != committed_txs_.end()) {
        r.kind = SubmitResult::Kind::Committed;
        r.height = it->second.first;
        r.outcome = it->second.second;
        return r;
    }
    if (pool_ids_.count(id)) {
        r.kind = SubmitResult::Kind::Duplicate;
        return r;
    }
    r.status = ledger::check_tx(state_, tx, true);
    if (r.status != ledger::TxStatus::Accepted) {
        r.kind = SubmitResult::Kind::Rejected;
        return r;
    }
    pool_.push_back({tx, id, now});
    pool_ids_.insert(id);
    return r;
}

Output Replica::on_message(const Message& msg, std::uint64_t now) {
    Output out;
    handle(msg, now, out);
    finish(out);
    return out;
}

void Replica::handle(const Message& msg, std::uint64_t now, Output& out) {
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m.body)>;
            if constexpr (std::is_same_v<T, PrePrepare>) on_pre_prepare(m, now, out);
            else if constexpr (std::is_same_v<T, Vote>) on_vote(m, now, out);
            else if constexpr (std::is_same_v<T, ViewChange>) on_view_change(m, now, out);
            else if constexpr (std::is_same_v<T, NewView>) on_new_view(m, now, out);
            else if constexpr (std::is_same_v<T, FetchRequest>) on_fetch_request(m, out);
            else on_fetch_reply(m, now, out);
        },
        msg);
}

void Replica::finish(Output& out) const {
    if (cfg_.behavior == Behavior::Mute) out.messages.clear();
}

Output Replica::on_tick(std::uint64_t now) {
    Output out;
    const bool pending = has_pending_work();
    if (!pending) {
        timer_armed_ = false;
    } else if (!timer_armed_) {
        timer_armed_ = true;
        timer_start_ = now;
    }

    if (status_ == Status::Normal) {
        if (timer_armed_ && now - timer_start_ >= cfg_.view_timeout) {
            start_view_change(view_ + 1, now, out);
        } else {
            propose_into(now, out);
            if (pending && now - last_retransmit_ >= cfg_.retransmit_interval) {
                for (const auto& m : slot_.sent) send(out, m);
                last_retransmit_ = now;
            }
        }
    } else {
        const auto backoff = cfg_.view_timeout << std::min(vc_attempts_, kMaxBackoff);
        if (now - vc_started_ >= backoff) {
            start_view_change(view_ + 1, now, out);
        } else if (vc_msg_ && now - last_retransmit_ >= cfg_.retransmit_interval) {
            send(out, *vc_msg_);
            last_retransmit_ = now;
        }
    }
    maybe_fetch(now, out);
    finish(out);
    return out;
}

Output Replica::propose(std::uint64_t now) {
    Output out;
    propose_into(now, out);
    finish(out);
    return out;
}

void Replica::propose_into(std::uint64_t now, Output& out) {
    if (!is_primary() || status_ != Status::Normal || pool_.empty()) return;
    if (slot_.pre_prepares.count(view_)) return;
    if (now < pool_.front().arrival + cfg_.batch_delay) return;

    ledger::LedgerState scratch = state_;
    std::vector<Transaction> txs;
    std::vector<PoolEntry> keep;
    for (auto& e : pool_) {
        if (txs.size() >= ledger::kMaxBlockTxs) {
            keep.push_back(std::move(e));
            continue;
        }
        auto o = ledger::apply_tx(scratch, e.tx, nullptr, false);
        if (o.accepted()) {
            txs.push_back(e.tx);
            keep.push_back(std::move(e));
        } else {
            pool_ids_.erase(e.id);
            out.rejected.push_back({e.id, o.status});
        }
    }
    pool_ = std::move(keep);
    if (txs.empty()) return;

    const auto h = height() + 1;
    auto block = ledger::make_block(state_.tip(), now, id_, std::move(txs));

    if (cfg_.behavior == Behavior::Alter) {
        send(out, make(PrePrepare{view_, h, alter(block)}));
        return;
    }
    auto pp = make(PrePrepare{view_, h, block});
    if (cfg_.behavior == Behavior::Equivocate) {
        // A different block for every backup, so no two of them agree.
        for (ReplicaId r = 0; r < q_.n; ++r) {
            if (r == id_) continue;
            auto variant = block;
            variant.header.timestamp += r + 1;
            send(out, make(PrePrepare{view_, h, variant}), r);
        }
    } else {
        send(out, pp);
        slot_.sent.push_back(pp);
    }
    accept_pre_prepare(std::get<Signed<PrePrepare>>(*pp), now, out);
}

Block Replica::alter(Block b) const {
    if (b.txs.empty()) return b;
    b.txs.front().seq += 1;
    b.header.tx_root = ledger::compute_tx_root(b.txs);
    return b;
}

void Replica::buffer_future(const Message& m, std::uint64_t h) {
    if (h > height() + kFutureHeights) return;
    auto& bucket = future_[h];
    if (bucket.size() < 8 * q_.n) bucket.push_back(m);
}

void Replica::note_height(ReplicaId from, std::uint64_t committed_at_least, std::uint64_t now, Output& out) {
    if (from == id_) return;
    if (committed_at_least > known_height_) {
        known_height_ = committed_at_least;
        fetch_hint_ = from;
    }
    maybe_fetch(now, out);
}

void Replica::maybe_fetch(std::uint64_t now, Output& out) {
    if (known_height_ <= height() || !fetch_hint_) return;
    if (fetched_once_ && now - last_fetch_ < cfg_.fetch_interval) return;
    fetched_once_ = true;
    last_fetch_ = now;
    send(out, make(FetchRequest{height() + 1}), *fetch_hint_);
    // Rotate so a silent peer cannot stall catch-up.
    auto next = (*fetch_hint_ + 1) % q_.n;
    if (next == id_) next = (next + 1) % q_.n;
    fetch_hint_ = next;
}

void Replica::on_pre_prepare(const Signed<PrePrepare>& m, std::uint64_t now, Output& out) {
    const auto& pp = m.body;
    if (!verify_message(m, cfg_.validators) || m.sender != q_.primary(pp.view) ||
        pp.block.header.height != pp.height) {
        ++stats_.misbehavior;
        return;
    }
    const auto h = height() + 1;
    if (pp.height < h) return;
    if (pp.height > h) {
        buffer_future(m, pp.height);
        note_height(m.sender, pp.height - 1, now, out);
        return;
    }
    if (pp.view < view_) return;
    if (pp.view > view_) {
        if (future_view_.size() < 8 * q_.n) future_view_.push_back(m);
        return;
    }
    if (status_ != Status::Normal) return;
    const auto d = pp.block.hash();
    if (auto it = slot_.pre_prepares.find(pp.view); it != slot_.pre_prepares.end()) {
        if (it->second.body.block.hash() != d) ++stats_.misbehavior;
        return;
    }
    if (!ledger::validate_block(state_.tip(), pp.block, state_)) {
        ++stats_.misbehavior;
        return;
    }
    accept_pre_prepare(m, now, out);
}

void Replica::accept_pre_prepare(const Signed<PrePrepare>& m, std::uint64_t now, Output& out) {
    const auto& pp = m.body;
    const auto d = pp.block.hash();
    slot_.pre_prepares[pp.view] = m;
    slot_.blocks[d] = pp.block;
    if (id_ != q_.primary(pp.view)) {
        auto vote = make(Vote{MsgKind::Prepare, pp.view, pp.height, d});
        slot_.prepares[{pp.view, d}][id_] = std::get<Signed<Vote>>(*vote);
        slot_.sent.push_back(vote);
        send(out, vote);
        if (cfg_.behavior == Behavior::Equivocate) {
            auto fake = crypto::hash(d.bytes);
            send(out, make(Vote{MsgKind::Prepare, pp.view, pp.height, fake}));
            send(out, make(Vote{MsgKind::Commit, pp.view, pp.height, fake}));
            send(out, make(Vote{MsgKind::Commit, pp.view, pp.height, d}));
        }
    }
    check_prepared(pp.view, d, now, out);
    check_committed(pp.view, d, now, out);
}

void Replica::on_vote(const Signed<Vote>& m, std::uint64_t now, Output& out) {
    const auto& v = m.body;
    if (!verify_message(m, cfg_.validators)) {
        ++stats_.misbehavior;
        return;
    }
    const auto h = height() + 1;
    if (v.height < h) return;
    if (v.height > h) {
        buffer_future(m, v.height);
        note_height(m.sender, v.height - 1, now, out);
        return;
    }
    if (v.kind == MsgKind::Prepare) {
        if (m.sender == q_.primary(v.view)) return;
        if (v.view > view_) {
            if (future_view_.size() < 8 * q_.n) future_view_.push_back(m);
            return;
        }
        if (v.view < view_) return;
        slot_.prepares[{v.view, v.digest}][m.sender] = m;
        check_prepared(v.view, v.digest, now, out);
    } else {
        slot_.commits[{v.view, v.digest}][m.sender] = m;
        check_committed(v.view, v.digest, now, out);
    }
}

void Replica::check_prepared(std::uint64_t view, const Digest& d, std::uint64_t now, Output& out) {
    if (status_ != Status::Normal || view != view_ || slot_.commit_sent.count(view)) return;
    auto pp = slot_.pre_prepares.find(view);
    if (pp == slot_.pre_prepares.end() || pp->second.body.block.hash() != d) return;
    auto ps = slot_.prepares.find({view, d});
    if (ps == slot_.prepares.end() || ps->second.size() < 2 * q_.f()) return;

    PreparedCert cert{pp->second, {}};
    for (const auto& [sender, vote] : ps->second) {
        if (cert.prepares.size() == 2 * q_.f()) break;
        cert.prepares.push_back(vote);
    }
    if (!slot_.prepared || slot_.prepared->view() < view) slot_.prepared = std::move(cert);

    slot_.commit_sent.insert(view);
    auto commit = make(Vote{MsgKind::Commit, view, pp->second.body.height, d});
    slot_.commits[{view, d}][id_] = std::get<Signed<Vote>>(*commit);
    slot_.sent.push_back(commit);
    send(out, commit);
    check_committed(view, d, now, out);
}

void Replica::check_committed(std::uint64_t view, const Digest& d, std::uint64_t now, Output& out) {
    auto cs = slot_.commits.find({view, d});
    if (cs == slot_.commits.end() || cs->second.size() < q_.quorum()) return;
    auto block = slot_.blocks.find(d);
    if (block == slot_.blocks.end()) {
        for (const auto& [sender, _] : cs->second) {
            if (sender == id_) continue;
            note_height(sender, height() + 1, now, out);
            break;
        }
        return;
    }
    CommitCert cert;
    for (const auto& [sender, vote] : cs->second) {
        if (cert.commits.size() == q_.quorum()) break;
        cert.commits.push_back(vote);
    }
    auto b = block->second;
    commit_block(b, std::move(cert), view, now, out);
}

void Replica::commit_block(const Block& block, CommitCert cert, std::uint64_t view, std::uint64_t now, Output& out) {
    auto outcomes = ledger::apply_block(state_, block, store_);
    chain_.push_back(block);
    certs_.push_back(std::move(cert));

    std::set<Digest> included;
    for (std::size_t i = 0; i < block.txs.size(); ++i) {
        auto id = block.txs[i].id();
        included.insert(id);
        committed_txs_[id] = {block.header.height, outcomes[i]};
    }
    out.commits.push_back({block, view, std::move(outcomes)});

    std::vector<PoolEntry> keep;
    for (auto& e : pool_) {
        if (included.count(e.id)) {
            pool_ids_.erase(e.id);
            continue;
        }
        auto status = ledger::check_tx(state_, e.tx, false);
        if (status == ledger::TxStatus::Accepted) {
            keep.push_back(std::move(e));
        } else {
            pool_ids_.erase(e.id);
            out.rejected.push_back({e.id, status});
        }
    }
    pool_ = std::move(keep);

    slot_ = Slot{};
    timer_start_ = now;
    timer_armed_ = has_pending_work();
    if (status_ == Status::Normal) vc_attempts_ = 0;

    future_.erase(future_.begin(), future_.upper_bound(height()));
    if (auto node = future_.extract(height() + 1); !node.empty())
        for (const auto& m : node.mapped()) handle(m, now, out);

    propose_into(now, out);
}

void Replica::start_view_change(std::uint64_t target, std::uint64_t now, Output& out) {
    if (target <= view_) return;
    status_ = Status::ViewChanging;
    view_ = target;
    vc_started_ = now;
    last_retransmit_ = now;
    ++vc_attempts_;
    ++stats_.view_changes_started;

    ViewChange vc;
    vc.new_view = target;
    vc.committed_height = height();
    if (height() > genesis_height_) vc.commit_proof = certs_.back();
    if (slot_.prepared && slot_.prepared->height() == height() + 1) vc.prepared = slot_.prepared;
    auto msg = make(std::move(vc));
    view_changes_[target][id_] = std::get<Signed<ViewChange>>(*msg);
    view_changes_.erase(view_changes_.begin(), view_changes_.lower_bound(target));
    vc_msg_ = msg;
    send(out, msg);
    try_new_view(target, now, out);
}

bool Replica::valid_view_change(const Signed<ViewChange>& m) const {
    if (!verify_message(m, cfg_.validators)) return false;
    const auto& vc = m.body;
    if (vc.committed_height > genesis_height_) {
        if (!vc.commit_proof || vc.commit_proof->commits.empty()) return false;
        const auto& d = vc.commit_proof->commits.front().body.digest;
        if (!verify_commit_cert(*vc.commit_proof, vc.committed_height, d, cfg_.validators)) return false;
    }
    if (vc.prepared) {
        if (vc.prepared->height() != vc.committed_height + 1 || vc.prepared->view() >= vc.new_view) return false;
        if (!verify_prepared_cert(*vc.prepared, cfg_.validators)) return false;
    }
    return true;
}

std::pair<std::uint64_t, const PreparedCert*> Replica::select(const std::vector<Signed<ViewChange>>& vcs) const {
    std::uint64_t hmax = 0;
    for (const auto& vc : vcs) hmax = std::max(hmax, vc.body.committed_height);
    const PreparedCert* best = nullptr;
    for (const auto& vc : vcs) {
        const auto& p = vc.body.prepared;
        if (p && p->height() == hmax + 1 && (!best || p->view() > best->view())) best = &*p;
    }
    return {hmax, best};
}

void Replica::on_view_change(const Signed<ViewChange>& m, std::uint64_t now, Output& out) {
    if (!valid_view_change(m)) {
        ++stats_.misbehavior;
        return;
    }
    const auto& vc = m.body;
    if (vc.committed_height > height()) note_height(m.sender, vc.committed_height, now, out);

    if (vc.new_view < view_ || (vc.new_view == view_ && status_ == Status::Normal)) {
        // The sender is behind; hand it the certificate for the view we are in.
        if (last_new_view_ && m.sender != id_) {
            auto it = new_view_forwarded_.find(m.sender);
            if (it == new_view_forwarded_.end() || now - it->second >= cfg_.retransmit_interval) {
                new_view_forwarded_[m.sender] = now;
                send(out, *last_new_view_, m.sender);
            }
        }
        return;
    }
    view_changes_[vc.new_view][m.sender] = m;

    if (vc.new_view > view_) {
        std::map<ReplicaId, std::uint64_t> lowest;
        for (auto it = view_changes_.upper_bound(view_); it != view_changes_.end(); ++it)
            for (const auto& [sender, _] : it->second)
                if (sender != id_ && !lowest.count(sender)) lowest[sender] = it->first;
        if (lowest.size() >= q_.f() + 1) {
            std::uint64_t target = UINT64_MAX;
            for (const auto& [_, v] : lowest) target = std::min(target, v);
            start_view_change(target, now, out);
        }
    }
    try_new_view(vc.new_view, now, out);
}

void Replica::try_new_view(std::uint64_t view, std::uint64_t now, Output& out) {
    if (q_.primary(view) != id_ || new_view_sent_.count(view)) return;
    if (view < view_ || (view == view_ && status_ == Status::Normal)) return;
    auto it = view_changes_.find(view);
    if (it == view_changes_.end() || it->second.size() < q_.quorum()) return;

    NewView nv;
    nv.view = view;
    for (const auto& [sender, vc] : it->second) {
        if (nv.view_changes.size() == q_.quorum()) break;
        nv.view_changes.push_back(vc);
    }
    auto [hmax, best] = select(nv.view_changes);
    if (best) nv.pre_prepare = sign_message(id_, PrePrepare{view, hmax + 1, best->pre_prepare.body.block}, keys_.private_key);
    new_view_sent_.insert(view);
    auto msg = make(std::move(nv));
    send(out, msg);
    enter_new_view(msg, now, out);
}

void Replica::on_new_view(const Signed<NewView>& m, std::uint64_t now, Output& out) {
    const auto& nv = m.body;
    if (nv.view < view_ || (nv.view == view_ && status_ == Status::Normal)) return;
    bool ok = verify_message(m, cfg_.validators) && m.sender == q_.primary(nv.view);
    std::set<ReplicaId> senders;
    for (const auto& vc : nv.view_changes) {
        if (!ok) break;
        ok = vc.body.new_view == nv.view && senders.insert(vc.sender).second && valid_view_change(vc);
    }
    ok = ok && senders.size() >= q_.quorum();
    if (ok) {
        auto [hmax, best] = select(nv.view_changes);
        if (best) {
            const auto& pp = nv.pre_prepare;
            ok = pp && pp->sender == m.sender && pp->body.view == nv.view && pp->body.height == hmax + 1 &&
                 pp->body.block == best->pre_prepare.body.block && verify_message(*pp, cfg_.validators);
        } else {
            ok = !nv.pre_prepare;
        }
    }
    if (!ok) {
        ++stats_.misbehavior;
        return;
    }
    enter_new_view(std::make_shared<const Message>(m), now, out);
}

void Replica::enter_new_view(const MessagePtr& msg, std::uint64_t now, Output& out) {
    const auto& nv = std::get<Signed<NewView>>(*msg).body;
    view_ = nv.view;
    status_ = Status::Normal;
    ++stats_.new_views_entered;
    last_new_view_ = msg;
    vc_msg_.reset();
    timer_start_ = now;
    timer_armed_ = has_pending_work();
    last_retransmit_ = now;
    view_changes_.erase(view_changes_.begin(), view_changes_.upper_bound(view_));

    auto [hmax, best] = select(nv.view_changes);
    (void)best;
    if (hmax > height())
        for (const auto& vc : nv.view_changes)
            if (vc.body.committed_height == hmax) {
                note_height(vc.sender, hmax, now, out);
                break;
            }
    if (nv.pre_prepare) on_pre_prepare(*nv.pre_prepare, now, out);

    auto buffered = std::move(future_view_);
    future_view_.clear();
    for (const auto& m : buffered) {
        std::uint64_t v = std::visit(
            [](const auto& s) -> std::uint64_t {
                using T = std::decay_t<decltype(s.body)>;
                if constexpr (std::is_same_v<T, PrePrepare> || std::is_same_v<T, Vote>) return s.body.view;
                else return 0;
            },
            m);
        if (v == view_) handle(m, now, out);
        else if (v > view_ && future_view_.size() < 8 * q_.n) future_view_.push_back(m);
    }
    propose_into(now, out);
}

void Replica::on_fetch_request(const Signed<FetchRequest>& m, Output& out) {
    if (!verify_message(m, cfg_.validators)) {
        ++stats_.misbehavior;
        return;
    }
    const auto from = m.body.from_height;
    if (from == 0 || from > height()) return;
    FetchReply reply;
    for (auto h = from; h <= height() && reply.blocks.size() < kFetchBatch; ++h) {
        reply.blocks.push_back(chain_[h - 1]);
        reply.certs.push_back(certs_[h - 1]);
    }
    if (cfg_.behavior == Behavior::Alter) reply.blocks.front() = alter(reply.blocks.front());
    send(out, make(std::move(reply)), m.sender);
}

void Replica::on_fetch_reply(const Signed<FetchReply>& m, std::uint64_t now, Output& out) {
    if (!verify_message(m, cfg_.validators) || m.body.blocks.size() != m.body.certs.size()) {
        ++stats_.misbehavior;
        return;
    }
    for (std::size_t i = 0; i < m.body.blocks.size(); ++i) {
        const auto& b = m.body.blocks[i];
        const auto& cert = m.body.certs[i];
        if (b.header.height <= height()) continue;
        if (b.header.height > height() + 1) break;
        if (!verify_commit_cert(cert, b.header.height, b.hash(), cfg_.validators) ||
            !ledger::validate_block(state_.tip(), b, state_)) {
            ++stats_.misbehavior;
            break;
        }
        ++stats_.blocks_fetched;
        commit_block(b, cert, cert.commits.front().body.view, now, out);
    }
}

}  // namespace medchain::pbft
