#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/evaluator.hpp"
#include "lane/synthetic.hpp"
#include "tiny_model.hpp"

namespace {

using namespace lane;

UserSplit user(std::vector<ItemIndex> train, ItemIndex valid, ItemIndex test) {
  UserSplit u;
  u.user_id = "u";
  u.train = std::move(train);
  u.valid = valid;
  u.test = test;
  return u;
}

TEST(Evaluator, ForcedNegativeSetWhenPoolIsExact) {
  const UserSplit u = user({}, 1, 101);
  UserSplit only_test;
  only_test.user_id = "v";
  only_test.train = {};
  only_test.test = 50;
  only_test.valid = std::nullopt;
  lane::Rng rng(1);
  const auto c = build_eval_candidates(only_test, EvalSplit::test, 101, rng);
  std::set<ItemIndex> negs(c.negatives.begin(), c.negatives.end());
  EXPECT_EQ(c.target, 50);
  EXPECT_EQ(negs.size(), 100u);
  EXPECT_FALSE(negs.contains(50));
  EXPECT_THROW(build_eval_candidates(u, EvalSplit::test, 101, rng), ProtocolError);
}

TEST(Evaluator, CandidatesAreDeterministicPerSeedAndUser) {
  const UserSplit u = user({1, 2, 3}, 4, 5);
  lane::Rng a(candidate_seed(9, EvalSplit::test, "u")), b(candidate_seed(9, EvalSplit::test, "u"));
  EXPECT_EQ(build_eval_candidates(u, EvalSplit::test, 500, a).negatives,
            build_eval_candidates(u, EvalSplit::test, 500, b).negatives);
  EXPECT_NE(candidate_seed(9, EvalSplit::test, "u"), candidate_seed(9, EvalSplit::valid, "u"));
}

TEST(Evaluator, NegativesNeverIncludeInteractedItems) {
  synthetic::Options o;
  o.users = 300;
  o.items = 150;
  o.min_length = 5;
  o.max_length = 40;
  const auto corpus = synthetic::random_corpus(o);
  const auto split = leave_one_out_split(corpus.log, corpus.catalog);
  std::size_t draws = 0;
  for (const auto& u : split.users) {
    if (!u.test) continue;
    std::set<ItemIndex> owned(u.train.begin(), u.train.end());
    owned.insert(*u.valid);
    owned.insert(*u.test);
    for (EvalSplit s : {EvalSplit::valid, EvalSplit::test}) {
      lane::Rng rng(candidate_seed(1, s, u.user_id));
      const auto c = build_eval_candidates(u, s, corpus.catalog.size(), rng);
      std::set<ItemIndex> unique(c.negatives.begin(), c.negatives.end());
      EXPECT_EQ(unique.size(), 100u);
      for (ItemIndex n : c.negatives) {
        EXPECT_FALSE(owned.contains(n)) << u.user_id;
        ++draws;
      }
    }
  }
  EXPECT_GT(draws, 50000u);
}

TEST(Evaluator, ShortPoolIsErrorUnlessAllowed) {
  const UserSplit u = user({1, 2, 3}, 4, 5);
  lane::Rng rng(2);
  try {
    build_eval_candidates(u, EvalSplit::test, 50, rng);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("'u'"), std::string::npos) << e.what();
  }
  CandidateOptions opts;
  opts.allow_short_pool = true;
  const auto c = build_eval_candidates(u, EvalSplit::test, 50, rng, opts);
  EXPECT_EQ(c.negatives.size(), 45u);
}

TEST(Evaluator, RankUsesStrictlyGreaterRule) {
  const std::vector<double> unique_max = {5, 1, 2, 3};
  EXPECT_EQ(rank_of_target(unique_max, 0), 1u);
  const std::vector<double> ties(101, 0.25);
  EXPECT_EQ(rank_of_target(ties, 0), 1u);
  const std::vector<double> mid = {2, 3, 2, 1, 5};
  EXPECT_EQ(rank_of_target(mid, 0), 3u);
}

TEST(Evaluator, RankMatchesSortOracle) {
  lane::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(101);
    for (double& x : s) x = std::round(rng.uniform(-3, 3) * 4) / 4;
    const std::size_t t = rng.below(101);
    EXPECT_EQ(rank_of_target(s, t), oracle::sorted_rank(s, t));
  }
}

TEST(Evaluator, MetricsFormula) {
  const std::vector<std::size_t> r1 = {1};
  EXPECT_EQ(compute_metrics(r1, 10).hr_at_k, 1.0);
  EXPECT_EQ(compute_metrics(r1, 10).ndcg_at_k, 1.0);
  const std::vector<std::size_t> r11 = {11};
  EXPECT_EQ(compute_metrics(r11, 10).hr_at_k, 0.0);
  EXPECT_EQ(compute_metrics(r11, 10).ndcg_at_k, 0.0);
  const std::vector<std::size_t> r2 = {2};
  EXPECT_NEAR(compute_metrics(r2, 10).ndcg_at_k, 0.63093, 1e-5);
  const auto empty = compute_metrics({}, 10);
  EXPECT_FALSE(empty.defined);
  EXPECT_EQ(empty.user_count, 0u);
  lane::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> ranks(1 + rng.below(50));
    for (auto& r : ranks) r = 1 + rng.below(101);
    const auto m = compute_metrics(ranks, 1 + rng.below(20));
    EXPECT_LE(m.ndcg_at_k, m.hr_at_k);
    EXPECT_GE(m.ndcg_at_k, 0.0);
    EXPECT_LE(m.hr_at_k, 1.0);
  }
}

struct EvalFixture {
  SplitDataset split;
  LaneModel model;
  PreferenceEmbeddings prefs;
};

EvalFixture eval_fixture(bool use_alignment) {
  synthetic::Options o;
  o.users = 40;
  o.items = 150;
  o.min_length = 5;
  o.max_length = 12;
  o.seed = 6;
  const auto corpus = synthetic::random_corpus(o);
  EvalFixture f;
  f.split = leave_one_out_split(corpus.log, corpus.catalog);
  oracle::TinySpec spec;
  spec.items = corpus.catalog.size();
  spec.n = 8;
  spec.use_alignment = use_alignment;
  f.model = oracle::tiny_model(spec);
  for (const auto& u : f.split.users) f.prefs.emplace(u.user_id, oracle::tiny_preferences(3, spec.d, fnv1a64(u.user_id)));
  return f;
}

TEST(Evaluator, RanksInvariantToMonotoneTransform) {
  lane::Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(101), t(101);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(rng.uniform(-2, 2) * 8) / 8;
      t[i] = std::exp(0.5 * s[i]) * 3.0 + 1.0;
    }
    const std::size_t target = rng.below(101);
    EXPECT_EQ(rank_of_target(s, target), rank_of_target(t, target));
  }
}

TEST(Evaluator, SkipsUsersWithoutPreferences) {
  EvalFixture f = eval_fixture(true);
  f.prefs.erase(f.split.users[0].user_id);
  f.prefs.erase(f.split.users[1].user_id);
  EvalOptions opts;
  const auto r = evaluate_model(f.model, f.split, f.prefs, opts);
  EXPECT_EQ(r.skipped_missing_preferences, 2u);
  EXPECT_EQ(r.per_user.size() + 2 + r.skipped_no_target, f.split.users.size());
}

TEST(Evaluator, DeterministicAndJsonShaped) {
  EvalFixture f = eval_fixture(true);
  EvalOptions opts;
  opts.seed = 11;
  const auto a = evaluate_model(f.model, f.split, f.prefs, opts);
  const auto b = evaluate_model(f.model, f.split, f.prefs, opts);
  EXPECT_EQ(metrics_json(a), metrics_json(b));
  const auto j = nlohmann::json::parse(metrics_json(a));
  EXPECT_EQ(j.at("split"), "test");
  ASSERT_EQ(j.at("metrics").size(), 2u);
  for (const auto& m : j["metrics"]) EXPECT_LE(m.at("ndcg").get<double>(), m.at("hr").get<double>());
  EXPECT_EQ(a.at(10).k, 10u);
  for (const auto& u : a.per_user) EXPECT_EQ(u.candidates, 101u);
}

}  // namespace
