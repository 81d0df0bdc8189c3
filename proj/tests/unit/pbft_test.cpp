#include "medchain/pbft.hpp"

#include <gtest/gtest.h>

#include <deque>
#include <functional>
#include <random>

using namespace medchain;
using namespace medchain::crypto;
using namespace medchain::pbft;

namespace {

// Minimal in-process bus: FIFO or seeded-shuffle delivery, crash set, and an
// optional drop filter. Commits are recorded per replica for the safety check.
struct Bus {
    std::vector<SigningKeyPair> keys;
    std::vector<std::unique_ptr<Replica>> replicas;
    std::deque<std::pair<ReplicaId, MessagePtr>> queue;
    std::set<ReplicaId> down;
    std::function<bool(ReplicaId to, const Message&)> drop;
    std::vector<std::map<std::uint64_t, Digest>> committed;
    std::mt19937_64 order;
    bool shuffle = false;
    std::uint64_t now = 0;

    Bus(std::uint32_t n, std::uint64_t seed, std::map<ReplicaId, Behavior> byz = {}) : committed(n), order(seed) {
        Rng rng(seed);
        ReplicaConfig cfg;
        for (std::uint32_t i = 0; i < n; ++i) {
            keys.push_back(gen_sig_keypair(rng));
            cfg.validators.push_back(keys.back().public_key);
        }
        for (std::uint32_t i = 0; i < n; ++i) {
            auto c = cfg;
            if (auto it = byz.find(i); it != byz.end()) c.behavior = it->second;
            replicas.push_back(std::make_unique<Replica>(i, keys[i], c));
        }
    }

    Replica& at(ReplicaId i) { return *replicas[i]; }

    void dispatch(ReplicaId from, Output out) {
        for (auto& o : out.messages) {
            for (ReplicaId to = 0; to < replicas.size(); ++to) {
                if (o.to ? *o.to != to : to == from) continue;
                queue.emplace_back(to, o.message);
            }
        }
        for (const auto& c : out.commits) {
            auto [it, fresh] = committed[from].emplace(c.block.header.height, c.block.hash());
            EXPECT_TRUE(fresh) << "replica " << from << " committed height twice";
        }
    }

    void submit_all(const ledger::Transaction& tx) {
        for (auto& r : replicas) r->submit(tx, now);
    }

    void step() {
        auto batch = std::move(queue);
        queue.clear();
        if (shuffle) std::shuffle(batch.begin(), batch.end(), order);
        for (auto& [to, m] : batch) {
            if (down.count(to) || (drop && drop(to, *m))) continue;
            dispatch(to, replicas[to]->on_message(*m, now));
        }
        ++now;
        for (auto& r : replicas)
            if (!down.count(r->id())) dispatch(r->id(), r->on_tick(now));
    }

    bool run_until(const std::function<bool()>& done, std::uint64_t max_ticks = 2000) {
        for (std::uint64_t i = 0; i < max_ticks; ++i) {
            if (done()) return true;
            step();
        }
        return done();
    }

    bool all_live_at(std::uint64_t h) {
        for (auto& r : replicas)
            if (!down.count(r->id()) && r->height() < h) return false;
        return true;
    }

    bool honest_agree(const std::set<ReplicaId>& byz = {}) const {
        std::map<std::uint64_t, Digest> seen;
        for (ReplicaId i = 0; i < committed.size(); ++i) {
            if (byz.count(i)) continue;
            for (const auto& [h, d] : committed[i]) {
                auto [it, fresh] = seen.emplace(h, d);
                if (!fresh && it->second != d) return false;
            }
        }
        return true;
    }
};

ledger::Transaction registration(std::uint64_t seed) {
    Rng rng(seed);
    auto kp = gen_sig_keypair(rng);
    return ledger::make_signed_tx(kp, 1, ledger::RegisterPayload{ledger::Role::Patient, ""});
}

}  // namespace

TEST(Quorum, Arithmetic) {
    for (std::uint32_t f = 1; f <= 3; ++f) {
        QuorumParams q{3 * f + 1};
        EXPECT_EQ(q.f(), f);
        EXPECT_EQ(q.quorum(), 2 * f + 1);
        EXPECT_EQ(q.primary(q.n + 2), 2u);
    }
}

TEST(Quorum, TwoFCommitsAreInsufficient) {
    Bus bus(4, 1);
    bus.submit_all(registration(100));
    auto pp_out = bus.at(0).propose(1);
    ASSERT_EQ(pp_out.messages.size(), 1u);
    const auto& pp = std::get<Signed<PrePrepare>>(*pp_out.messages[0].message);
    const auto d = pp.body.block.hash();

    auto& r1 = bus.at(1);
    r1.on_message(*pp_out.messages[0].message, 1);
    auto commit = [&](ReplicaId from) {
        return Message{sign_message(from, Vote{MsgKind::Commit, 0, 1, d}, bus.keys[from].private_key)};
    };
    r1.on_message(commit(0), 2);
    r1.on_message(commit(2), 2);
    EXPECT_EQ(r1.height(), 0u);
    auto out = r1.on_message(commit(3), 2);
    EXPECT_EQ(r1.height(), 1u);
    ASSERT_EQ(out.commits.size(), 1u);
    EXPECT_EQ(out.commits[0].block.hash(), d);

    CommitCert cert = r1.commit_certs().at(0);
    EXPECT_TRUE(verify_commit_cert(cert, 1, d, {bus.keys[0].public_key, bus.keys[1].public_key, bus.keys[2].public_key,
                                                bus.keys[3].public_key}));
    cert.commits.pop_back();
    std::vector<PublicKey> vs;
    for (const auto& k : bus.keys) vs.push_back(k.public_key);
    EXPECT_FALSE(verify_commit_cert(cert, 1, d, vs));
    // Duplicated sender does not count twice.
    cert.commits.push_back(cert.commits.front());
    EXPECT_FALSE(verify_commit_cert(cert, 1, d, vs));
}

TEST(Propose, PrimaryBatchesPoolIntoOneBlock) {
    Bus bus(4, 2);
    for (int i = 0; i < 3; ++i) bus.submit_all(registration(200 + i));
    auto out = bus.at(0).propose(5);
    ASSERT_EQ(out.messages.size(), 1u);
    const auto& pp = std::get<Signed<PrePrepare>>(*out.messages[0].message);
    EXPECT_EQ(pp.body.height, 1u);
    EXPECT_EQ(pp.body.block.txs.size(), 3u);
    EXPECT_FALSE(out.messages[0].to.has_value());
}

TEST(Propose, BackupAndEmptyPoolEmitNothing) {
    Bus bus(4, 3);
    EXPECT_TRUE(bus.at(0).propose(100).messages.empty());
    bus.submit_all(registration(300));
    EXPECT_TRUE(bus.at(1).propose(100).messages.empty());
}

TEST(Normal, AllHonestCommitSameBlock) {
    Bus bus(4, 4);
    bus.submit_all(registration(400));
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(1); }));
    for (ReplicaId i = 0; i < 4; ++i) {
        EXPECT_EQ(bus.committed[i].at(1), bus.committed[0].at(1));
        EXPECT_EQ(bus.at(i).view(), 0u);
        EXPECT_EQ(bus.at(i).ledger().state_digest(), bus.at(0).ledger().state_digest());
    }
}

TEST(Normal, ShuffledInterleavingsAgree) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Bus bus(4, 1000 + seed);
        bus.shuffle = true;
        for (int i = 0; i < 4; ++i) bus.submit_all(registration(seed * 10 + i));
        ASSERT_TRUE(bus.run_until([&] { return bus.at(0).pool_size() == 0 && bus.all_live_at(1); }));
        EXPECT_TRUE(bus.honest_agree());
    }
}

TEST(Normal, CrashedBackupStillCommits) {
    Bus bus(4, 5);
    bus.down = {3};
    bus.submit_all(registration(500));
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(1); }));
    EXPECT_EQ(bus.at(3).height(), 0u);
    EXPECT_EQ(bus.at(0).view(), 0u);
}

TEST(Normal, IdleReplicasNeverChangeView) {
    Bus bus(4, 6);
    for (int i = 0; i < 500; ++i) bus.step();
    for (auto& r : bus.replicas) {
        EXPECT_EQ(r->view(), 0u);
        EXPECT_EQ(r->stats().view_changes_started, 0u);
    }
    EXPECT_TRUE(bus.queue.empty());
}

TEST(ViewChange, PrimaryCrashBeforeProposing) {
    Bus bus(4, 7);
    bus.down = {0};
    bus.submit_all(registration(700));
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(1); }));
    for (ReplicaId i = 1; i < 4; ++i) {
        EXPECT_GE(bus.at(i).view(), 1u);
        EXPECT_GE(bus.at(i).stats().view_changes_started, 1u);
        EXPECT_EQ(bus.at(i).status(), Status::Normal);
    }
    EXPECT_TRUE(bus.honest_agree());
}

TEST(ViewChange, PreparedBlockIsReproposedAtSameHeight) {
    Bus bus(4, 8);
    bus.submit_all(registration(800));
    std::optional<Digest> proposed;
    // Every Commit of view 0 is lost and the primary dies after its PrePrepare.
    bus.drop = [&](ReplicaId, const Message& m) {
        if (const auto* pp = std::get_if<Signed<PrePrepare>>(&m); pp && pp->body.view == 0) {
            proposed = pp->body.block.hash();
            bus.down.insert(0);
        }
        const auto* v = std::get_if<Signed<Vote>>(&m);
        return v && v->body.kind == MsgKind::Commit && v->body.view == 0;
    };
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(1); }));
    ASSERT_TRUE(proposed.has_value());
    for (ReplicaId i = 1; i < 4; ++i) {
        EXPECT_EQ(bus.committed[i].at(1), *proposed);
        EXPECT_GE(bus.at(i).view(), 1u);
        EXPECT_EQ(bus.at(i).chain().front().header.height, 1u);
    }
}

TEST(ViewChange, LivenessWithinNViewChangesUnderMutePrimary) {
    Bus bus(7, 9, {{0, Behavior::Mute}, {1, Behavior::Mute}});
    bus.submit_all(registration(900));
    ASSERT_TRUE(bus.run_until([&] {
        for (ReplicaId i = 2; i < 7; ++i)
            if (bus.at(i).height() < 1) return false;
        return true;
    }, 5000));
    for (ReplicaId i = 2; i < 7; ++i) EXPECT_LE(bus.at(i).view(), 7u);
}

TEST(Byzantine, EquivocatingPrimaryNeverSplitsHonestReplicas) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Bus bus(4, 2000 + seed, {{0, Behavior::Equivocate}});
        bus.shuffle = true;
        for (int i = 0; i < 3; ++i) bus.submit_all(registration(5000 + seed * 10 + i));
        ASSERT_TRUE(bus.run_until([&] {
            for (ReplicaId i = 1; i < 4; ++i)
                if (bus.at(i).pool_size() > 0 || bus.at(i).height() < 1) return false;
            return true;
        }, 5000)) << "seed " << seed;
        EXPECT_TRUE(bus.honest_agree({0})) << "seed " << seed;
    }
}

TEST(Byzantine, AlteredProposalIsRejected) {
    Bus bus(4, 10, {{0, Behavior::Alter}});
    bus.submit_all(registration(1000));
    ASSERT_TRUE(bus.run_until([&] {
        for (ReplicaId i = 1; i < 4; ++i)
            if (bus.at(i).height() < 1) return false;
        return true;
    }));
    for (ReplicaId i = 1; i < 4; ++i) {
        EXPECT_GE(bus.at(i).stats().misbehavior, 1u);
        EXPECT_GE(bus.at(i).view(), 1u);
    }
    EXPECT_TRUE(bus.honest_agree({0}));
}

TEST(Closure, NonValidatorMessagesAreDropped) {
    Bus bus(4, 11);
    bus.submit_all(registration(1100));
    Rng rng(99);
    auto outsider = gen_sig_keypair(rng);
    auto block = ledger::make_block(bus.at(1).ledger().tip(), 1, 0, {registration(1100)});
    Message forged = sign_message(0, PrePrepare{0, 1, block}, outsider.private_key);
    auto out = bus.at(1).on_message(forged, 1);
    EXPECT_TRUE(out.messages.empty());
    EXPECT_EQ(bus.at(1).stats().misbehavior, 1u);

    Message out_of_range = sign_message(9, Vote{MsgKind::Commit, 0, 1, block.hash()}, outsider.private_key);
    EXPECT_TRUE(bus.at(1).on_message(out_of_range, 1).messages.empty());
    EXPECT_EQ(bus.at(1).stats().misbehavior, 2u);
}

TEST(Fetch, RecoveredReplicaCatchesUp) {
    Bus bus(4, 12);
    bus.down = {3};
    for (int i = 0; i < 3; ++i) {
        bus.submit_all(registration(1200 + i));
        ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(i + 1); }));
    }
    bus.down.clear();
    bus.submit_all(registration(1299));
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(4); }));
    EXPECT_GE(bus.at(3).stats().blocks_fetched, 3u);
    EXPECT_EQ(bus.at(3).ledger().state_digest(), bus.at(0).ledger().state_digest());
}

TEST(Codec, MessagesRoundTrip) {
    Bus bus(4, 13);
    bus.submit_all(registration(1300));
    ASSERT_TRUE(bus.run_until([&] { return bus.all_live_at(1); }));
    const auto& block = bus.at(0).chain().front();
    const auto& cert = bus.at(0).commit_certs().front();
    const auto& k = bus.keys[2].private_key;

    PreparedCert prepared{sign_message(1, PrePrepare{1, 2, block}, bus.keys[1].private_key), cert.commits};
    std::vector<Message> msgs{
        sign_message(2, PrePrepare{0, 1, block}, k),
        sign_message(2, Vote{MsgKind::Prepare, 3, 4, block.hash()}, k),
        sign_message(2, ViewChange{5, 1, cert, prepared}, k),
        sign_message(2, ViewChange{5, 0, std::nullopt, std::nullopt}, k),
        sign_message(2, FetchRequest{7}, k),
        sign_message(2, FetchReply{{block}, {cert}}, k),
    };
    msgs.push_back(sign_message(2, NewView{5, {std::get<Signed<ViewChange>>(msgs[2])}, std::get<Signed<PrePrepare>>(msgs[0])}, k));
    std::vector<PublicKey> vs;
    for (const auto& kp : bus.keys) vs.push_back(kp.public_key);
    for (const auto& m : msgs) {
        auto enc = encode_message(m);
        auto dec = decode_message(enc);
        EXPECT_EQ(dec, m);
        EXPECT_EQ(encode_message(dec), enc);
        std::visit([&](const auto& s) { EXPECT_TRUE(verify_message(s, vs)); }, dec);
        auto cut = enc;
        cut.pop_back();
        EXPECT_THROW(decode_message(cut), DecodeError);
    }
}
