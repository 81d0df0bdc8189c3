#include "medchain/store.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

using namespace medchain;
using namespace medchain::crypto;
using store::ContentStore;
using store::ReadStatus;

namespace {

Ciphertext sample(Rng& rng, std::string_view text) {
    return encrypt(gen_sym_key(rng), as_bytes(text), {}, rng);
}

std::vector<std::string> five_nodes() { return {"n0", "n1", "n2", "n3", "n4"}; }

}  // namespace

TEST(ContentStore, PutGetRoundTrip) {
    Rng rng(1);
    ContentStore s;
    auto c = sample(rng, "reading 37.2");
    auto key = s.put(c);
    EXPECT_EQ(key, hash(c.wire()));
    auto r = s.get(key);
    ASSERT_EQ(r.status, ReadStatus::Ok);
    EXPECT_EQ(*r.value, c);
    EXPECT_EQ(r.served_by, ContentStore::kLocal);
}

TEST(ContentStore, PutIsIdempotent) {
    Rng rng(2);
    ContentStore s;
    auto c = sample(rng, "x");
    EXPECT_EQ(s.put(c), s.put(c));
    EXPECT_EQ(s.size(), 1u);
    EXPECT_NE(s.put(sample(rng, "x")), s.put(c));
    EXPECT_EQ(s.size(), 2u);
}

TEST(ContentStore, MissingKey) {
    ContentStore s;
    auto r = s.get(hash(std::string_view{"never stored"}));
    EXPECT_EQ(r.status, ReadStatus::Missing);
    EXPECT_FALSE(r.value.has_value());
}

TEST(ContentStore, TamperIsDetectedNotReturned) {
    Rng rng(3);
    ContentStore s;
    auto key = s.put(sample(rng, "heart rate 71"));
    ASSERT_TRUE(s.tamper(key, ContentStore::kLocal, 14));
    auto r = s.get(key);
    EXPECT_EQ(r.status, ReadStatus::Tampered);
    EXPECT_FALSE(r.value.has_value());
    EXPECT_EQ(r.bad_holders, std::vector<std::string>{ContentStore::kLocal});
}

TEST(ContentStore, PutRepairsDamagedLocalCopy) {
    Rng rng(4);
    ContentStore s;
    auto c = sample(rng, "bp 120/80");
    auto key = s.put(c);
    s.tamper(key, ContentStore::kLocal, 0);
    s.put(c);
    EXPECT_EQ(s.get(key).status, ReadStatus::Ok);
}

TEST(ContentStore, ReplicateChoosesKDistinctHolders) {
    Rng rng(5);
    ContentStore s(five_nodes());
    auto key = s.put(sample(rng, "r"));
    auto report = s.replicate(key, 3);
    EXPECT_EQ(report.holders.size(), 3u);
    std::set<std::string> distinct(report.holders.begin(), report.holders.end());
    EXPECT_EQ(distinct.size(), 3u);
    EXPECT_EQ(s.holders(key).size(), 4u);

    ContentStore again(five_nodes());
    again.put(*s.get(key).value);
    EXPECT_EQ(again.replicate(key, 3).holders, report.holders);
}

TEST(ContentStore, ReplicateRejectsOversizedFactorAndUnknownKey) {
    Rng rng(6);
    ContentStore s(five_nodes());
    auto key = s.put(sample(rng, "r"));
    EXPECT_THROW(s.replicate(key, 6), std::invalid_argument);
    EXPECT_THROW(s.replicate(hash(std::string_view{"nope"}), 1), std::out_of_range);
}

TEST(ContentStore, ReadFallsBackAndReportsBadHolder) {
    Rng rng(7);
    ContentStore s(five_nodes());
    auto c = sample(rng, "glucose 5.4");
    auto key = s.put(c);
    auto placement = s.replicate(key, 3);
    s.tamper(key, ContentStore::kLocal, 3);
    s.tamper(key, placement.holders[0], 5);
    auto r = s.get(key);
    ASSERT_EQ(r.status, ReadStatus::Ok);
    EXPECT_EQ(*r.value, c);
    EXPECT_EQ(r.served_by, placement.holders[1]);
    EXPECT_EQ(r.bad_holders, (std::vector<std::string>{ContentStore::kLocal, placement.holders[0]}));
}

TEST(ContentStore, SoleHolderLostSurfacesMissing) {
    Rng rng(8);
    ContentStore s(five_nodes());
    auto key = s.put(sample(rng, "r"));
    auto placement = s.replicate(key, 1);
    ASSERT_TRUE(s.erase(key, ContentStore::kLocal));
    EXPECT_EQ(s.get(key).status, ReadStatus::Ok);
    ASSERT_TRUE(s.erase(key, placement.holders[0]));
    EXPECT_EQ(s.get(key).status, ReadStatus::Missing);
}

TEST(ContentStore, SaveLoadPreservesEntriesAndNodeViews) {
    Rng rng(9);
    ContentStore s(five_nodes());
    auto key = s.put(sample(rng, "persisted"));
    s.replicate(key, 2);
    auto dir = std::filesystem::temp_directory_path() / "medchain_store_test";
    std::filesystem::remove_all(dir);
    s.save(dir);
    EXPECT_TRUE(std::filesystem::exists(dir / key.hex()));
    auto loaded = ContentStore::load(dir);
    EXPECT_EQ(loaded.keys(), s.keys());
    EXPECT_EQ(loaded.holders(key), s.holders(key));
    EXPECT_EQ(loaded.get(key).value, s.get(key).value);
    std::filesystem::remove_all(dir);
}

TEST(ContentStore, ConcurrentIdenticalPutsStoreOnce) {
    Rng rng(10);
    ContentStore s;
    std::vector<Ciphertext> items;
    for (int i = 0; i < 64; ++i) items.push_back(sample(rng, "item" + std::to_string(i)));
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&] {
            for (const auto& c : items) s.put(c);
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(s.size(), items.size());
    for (const auto& c : items) EXPECT_EQ(s.get(c.digest()).status, ReadStatus::Ok);
}

TEST(ContentStore, EveryStoredKeyMatchesItsBytes) {
    Rng rng(11);
    ContentStore s(five_nodes());
    for (int i = 0; i < 20; ++i) s.replicate(s.put(sample(rng, std::to_string(i))), 1 + i % 5);
    s.for_each_raw([](const std::string&, const Digest& key, const Bytes& raw) { EXPECT_EQ(hash(raw), key); });
}
