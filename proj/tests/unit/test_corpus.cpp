#include <gtest/gtest.h>

#include <fstream>

#include "json.hpp"
#include "lane/corpus.hpp"
#include "lane/error.hpp"
#include "oracles.hpp"

namespace {

using namespace lane;
using nlohmann::json;

void write(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

InteractionLog make_log(std::initializer_list<std::tuple<const char*, const char*, std::int64_t>> rows) {
  InteractionLog log;
  for (auto [u, i, t] : rows) log.events.push_back({u, i, t});
  return log;
}

TEST(Corpus, LoadsTsvAndAssignsIndicesInFirstSeenOrder) {
  oracle::TempDir dir("corpus");
  write(dir.path() / "a.tsv", "u1\tb\tBee\t3\nu2\ta\tAy\t1\nu1\ta\tAy\t2\n");
  const auto c = load_interactions(dir.path() / "a.tsv", InputFormat::tsv);
  EXPECT_EQ(c.log.size(), 3u);
  ASSERT_EQ(c.catalog.size(), 2u);
  EXPECT_EQ(c.catalog.index_of("b"), 1);
  EXPECT_EQ(c.catalog.index_of("a"), 2);
  EXPECT_EQ(c.catalog.at(2).title, "Ay");
}

TEST(Corpus, LoadsJsonl) {
  oracle::TempDir dir("corpus");
  write(dir.path() / "a.jsonl",
        R"({"user_id":"u1","item_id":"x","title":"Ex","timestamp":5})" "\n"
        R"({"user_id":"u1","item_id":"y","title":"Why","timestamp":6})" "\n");
  const auto c = load_interactions(dir.path() / "a.jsonl", InputFormat::jsonl);
  EXPECT_EQ(c.log.size(), 2u);
  EXPECT_EQ(c.catalog.size(), 2u);
}

TEST(Corpus, EmptyFileGivesEmptyCorpus) {
  oracle::TempDir dir("corpus");
  write(dir.path() / "e.tsv", "");
  const auto c = load_interactions(dir.path() / "e.tsv", InputFormat::tsv);
  EXPECT_TRUE(c.log.empty());
  EXPECT_TRUE(c.catalog.empty());
}

TEST(Corpus, MalformedRowNamesTheLine) {
  oracle::TempDir dir("corpus");
  write(dir.path() / "m.tsv", "u1\ta\tAy\t1\nu1\tb\tBee\n");
  try {
    load_interactions(dir.path() / "m.tsv", InputFormat::tsv);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Corpus, ConflictingTitleIsIntegrityError) {
  oracle::TempDir dir("corpus");
  write(dir.path() / "c.tsv", "u1\ta\tAy\t1\nu2\ta\tOther\t2\n");
  EXPECT_THROW(load_interactions(dir.path() / "c.tsv", InputFormat::tsv), IntegrityError);
}

TEST(Corpus, KcoreRemovesSparseUser) {
  const auto log = make_log({{"u1", "a", 1}, {"u1", "b", 2}, {"u1", "c", 3}});
  EXPECT_TRUE(kcore_filter(log, 5).empty());
}

TEST(Corpus, KcoreThresholdOneIsIdentity) {
  const auto log = make_log({{"u1", "a", 1}, {"u2", "b", 2}, {"u1", "c", 3}});
  const auto out = kcore_filter(log, 1);
  ASSERT_EQ(out.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(out.events[i].item_id, log.events[i].item_id);
}

json expected(const std::string& name) { return json::parse(oracle::read_file(oracle::fixture(name))); }

void expect_matches_oracle(const std::string& tsv, std::size_t k, const std::string& frozen) {
  const auto raw = load_interactions(oracle::fixture(tsv), InputFormat::tsv);
  const auto filtered = kcore_filter(raw.log, k);
  const auto catalog = compact_catalog(filtered, raw.catalog);
  const auto split = leave_one_out_split(filtered, catalog);
  const json e = expected(frozen);

  EXPECT_EQ(filtered.size(), e.at("events").get<std::size_t>());
  ASSERT_EQ(catalog.size(), e.at("items").size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    EXPECT_EQ(catalog.at(static_cast<ItemIndex>(i + 1)).item_id, e["items"][i].get<std::string>());
  }
  ASSERT_EQ(split.users.size(), e.at("users").size());
  auto ids = [&](const std::vector<ItemIndex>& v) {
    std::vector<std::string> out;
    for (auto i : v) out.push_back(catalog.at(i).item_id);
    return out;
  };
  for (std::size_t u = 0; u < split.users.size(); ++u) {
    const auto& got = split.users[u];
    const auto& want = e["users"][u];
    EXPECT_EQ(got.user_id, want.at("user_id").get<std::string>());
    EXPECT_EQ(ids(got.train), want.at("train").get<std::vector<std::string>>());
    if (want.at("valid").is_null()) {
      EXPECT_FALSE(got.valid);
    } else {
      ASSERT_TRUE(got.valid && got.test);
      EXPECT_EQ(catalog.at(*got.valid).item_id, want["valid"].get<std::string>());
      EXPECT_EQ(catalog.at(*got.test).item_id, want["test"].get<std::string>());
    }
  }
}

TEST(Corpus, KcoreCascadeMatchesFixpointOracle) {
  expect_matches_oracle("kcore_cascade.tsv", 3, "kcore_cascade_3core.expected.json");
}

TEST(Corpus, TenUserFixtureMatchesSlicingOracle) {
  expect_matches_oracle("ten_users.tsv", 5, "ten_users_5core.expected.json");
}

TEST(Corpus, KcoreIsIdempotent) {
  const auto raw = load_interactions(oracle::fixture("ten_users.tsv"), InputFormat::tsv);
  for (std::size_t k : {2u, 3u, 5u, 6u}) {
    const auto once = kcore_filter(raw.log, k);
    const auto twice = kcore_filter(once, k);
    EXPECT_EQ(once.size(), twice.size()) << "k=" << k;
  }
}

TEST(Corpus, LeaveOneOutSlicesLastTwo) {
  ItemCatalog cat;
  for (const char* id : {"a", "b", "c", "d"}) cat.add(id, std::string("T") + id);
  const auto split = leave_one_out_split(make_log({{"u", "c", 3}, {"u", "a", 1}, {"u", "d", 4}, {"u", "b", 2}}), cat);
  ASSERT_EQ(split.users.size(), 1u);
  EXPECT_EQ(split.users[0].train, (std::vector<ItemIndex>{1, 2}));
  EXPECT_EQ(*split.users[0].valid, 3);
  EXPECT_EQ(*split.users[0].test, 4);
  EXPECT_EQ(split.users[0].history_before_test(), (std::vector<ItemIndex>{1, 2, 3}));
}

TEST(Corpus, ShortUsersKeepEverythingInTrain) {
  ItemCatalog cat;
  cat.add("a", "A");
  cat.add("b", "B");
  const auto split = leave_one_out_split(make_log({{"u", "a", 1}, {"u", "b", 2}}), cat);
  EXPECT_EQ(split.users[0].train.size(), 2u);
  EXPECT_FALSE(split.users[0].valid);
  EXPECT_FALSE(split.users[0].test);
}

TEST(Corpus, TimestampTiesKeepInputOrder) {
  ItemCatalog cat;
  for (const char* id : {"a", "b", "c", "d"}) cat.add(id, id);
  const auto split = leave_one_out_split(make_log({{"u", "b", 5}, {"u", "a", 5}, {"u", "c", 1}, {"u", "d", 9}}), cat);
  EXPECT_EQ(split.users[0].train, (std::vector<ItemIndex>{3, 2}));
  EXPECT_EQ(*split.users[0].valid, 1);
}

TEST(Corpus, SplitConcatenationReproducesSortedEvents) {
  const auto raw = load_interactions(oracle::fixture("ten_users.tsv"), InputFormat::tsv);
  const auto filtered = kcore_filter(raw.log, 5);
  const auto catalog = compact_catalog(filtered, raw.catalog);
  const auto split = leave_one_out_split(filtered, catalog);
  for (const auto& u : split.users) {
    std::vector<std::pair<std::int64_t, std::size_t>> events;
    for (std::size_t i = 0; i < filtered.size(); ++i) {
      if (filtered.events[i].user_id == u.user_id) events.push_back({filtered.events[i].timestamp, i});
    }
    std::stable_sort(events.begin(), events.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<ItemIndex> want;
    for (auto [t, i] : events) want.push_back(catalog.index_of(filtered.events[i].item_id));
    auto got = u.train;
    if (u.valid) got.push_back(*u.valid);
    if (u.test) got.push_back(*u.test);
    EXPECT_EQ(got, want) << u.user_id;
  }
}

TEST(Corpus, FixedSequencePadsAndTruncates) {
  EXPECT_EQ(build_fixed_sequence({5, 7}, 4).indices, (std::vector<ItemIndex>{0, 0, 5, 7}));
  EXPECT_EQ(build_fixed_sequence({5, 7}, 4).valid_mask, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(build_fixed_sequence({1, 2, 3, 4, 5}, 3).indices, (std::vector<ItemIndex>{3, 4, 5}));
  EXPECT_EQ(build_fixed_sequence({1, 2, 3}, 3).indices, (std::vector<ItemIndex>{1, 2, 3}));
  lane::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ItemIndex> v(1 + rng.below(12));
    for (auto& x : v) x = static_cast<ItemIndex>(1 + rng.below(9));
    const std::size_t n = 1 + rng.below(10);
    const auto s = build_fixed_sequence(v, n);
    EXPECT_EQ(s.valid_count(), std::min(v.size(), n));
    bool seen_real = false;
    for (auto i : s.indices) {
      if (i != 0) seen_real = true;
      else EXPECT_FALSE(seen_real);
    }
  }
}

TEST(Corpus, JsonlArtifactsRoundTrip) {
  oracle::TempDir dir("corpus");
  const auto raw = load_interactions(oracle::fixture("ten_users.tsv"), InputFormat::tsv);
  const auto catalog = compact_catalog(raw.log, raw.catalog);
  const auto split = leave_one_out_split(raw.log, catalog);
  write_catalog_jsonl(dir.path() / "catalog.jsonl", catalog);
  write_split_jsonl(dir.path() / "split.jsonl", split);
  const auto cat2 = read_catalog_jsonl(dir.path() / "catalog.jsonl");
  const auto split2 = read_split_jsonl(dir.path() / "split.jsonl", cat2.size());
  ASSERT_EQ(cat2.size(), catalog.size());
  for (const auto& item : catalog.items()) EXPECT_EQ(cat2.at(item.index).title, item.title);
  ASSERT_EQ(split2.users.size(), split.users.size());
  for (std::size_t u = 0; u < split.users.size(); ++u) {
    EXPECT_EQ(split2.users[u].train, split.users[u].train);
    EXPECT_EQ(split2.users[u].test, split.users[u].test);
  }
}

}  // namespace
