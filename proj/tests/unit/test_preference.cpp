#include <gtest/gtest.h>

#include <atomic>

#include "lane/error.hpp"
#include "lane/preference.hpp"
#include "oracles.hpp"

namespace {

using namespace lane;

class ScriptedClient final : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> answers) : answers_(std::move(answers)) {}
  std::string name() const override { return "scripted"; }
  PreferenceSource source() const override { return PreferenceSource::manual; }
  std::string complete(const std::string& prompt) override {
    last_prompt = prompt;
    const std::size_t i = calls++;
    return answers_[std::min(i, answers_.size() - 1)];
  }
  std::size_t calls = 0;
  std::string last_prompt;

 private:
  std::vector<std::string> answers_;
};

TEST(Preference, PromptHasSectionsInOrderAndTheHistory) {
  const std::string p = render_preference_prompt({"Quiet Harbor", "Night Signal"}, 5);
  std::size_t pos = 0;
  for (const char* section : kPreferencePromptSections) {
    const auto at = p.find(std::string("### ") + section, pos);
    ASSERT_NE(at, std::string::npos) << section;
    pos = at;
  }
  EXPECT_NE(p.find("Quiet Harbor"), std::string::npos);
  EXPECT_NE(p.find('5'), std::string::npos);
  EXPECT_EQ(p, render_preference_prompt({"Quiet Harbor", "Night Signal"}, 5));
}

TEST(Preference, ParsesFixtureResponse) {
  const auto prefs = parse_preference_response(oracle::read_file(oracle::fixture("preference_response.txt")), 5);
  ASSERT_EQ(prefs.size(), 5u);
  EXPECT_EQ(prefs[0], "Action-oriented gameplay");
  EXPECT_EQ(prefs[4], "Small independent studios");
}

TEST(Preference, WrongCountOrGapsAreMalformed) {
  EXPECT_THROW(parse_preference_response("1. a\n2. b\n", 3), MalformedResponse);
  EXPECT_THROW(parse_preference_response("1. a\n3. b\n", 2), MalformedResponse);
  EXPECT_THROW(parse_preference_response("1. a\n2. \n", 2), MalformedResponse);
  EXPECT_THROW(parse_preference_response("1. " + std::string(kMaxPreferenceLength + 1, 'x') + "\n", 1),
               MalformedResponse);
  EXPECT_EQ(parse_preference_response("1. a\n2. b\n", 2), (std::vector<std::string>{"a", "b"}));
}

TEST(Preference, RenderedListParsesBack) {
  const std::vector<std::string> prefs = {"Space operas", "Slow puzzles", "Co-op shooters"};
  EXPECT_EQ(parse_preference_response(render_preference_list(prefs), 3), prefs);
}

TEST(Preference, RetriesThenSucceeds) {
  ScriptedClient client({"nothing useful", "1. x\n2. y\n"});
  const auto out = extract_preferences("u1", {"A", "B"}, client, 2, 2, nullptr);
  ASSERT_TRUE(out.preferences);
  EXPECT_EQ(out.attempts, 2);
  EXPECT_EQ(out.preferences->preferences, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(out.preferences->prompt_hash, prompt_hash(client.last_prompt));
}

TEST(Preference, ExhaustedRetriesDropTheUser) {
  PreferenceStore store;
  ScriptedClient client({"no list here"});
  const auto out = extract_preferences("u1", {"A"}, client, 3, 2, &store);
  EXPECT_TRUE(out.dropped);
  EXPECT_EQ(client.calls, 2u);
  ASSERT_TRUE(store.find("u1"));
  EXPECT_TRUE(store.find("u1")->dropped);
}

TEST(Preference, CachedAnswerSkipsTheClient) {
  oracle::TempDir dir("prefs");
  ScriptedClient client({"1. x\n"});
  {
    PreferenceStore store(dir.path() / "p.jsonl");
    extract_preferences("u1", {"A"}, client, 1, 2, &store);
  }
  PreferenceStore reopened(dir.path() / "p.jsonl");
  const auto out = extract_preferences("u1", {"A"}, client, 1, 2, &reopened);
  EXPECT_TRUE(out.from_cache);
  EXPECT_EQ(client.calls, 1u);
  EXPECT_EQ(out.preferences->preferences, (std::vector<std::string>{"x"}));
}

TEST(Preference, StoreRewriteOrdersByUser) {
  oracle::TempDir dir("prefs");
  PreferenceStore store(dir.path() / "p.jsonl");
  for (const char* u : {"c", "a", "b", "a"}) store.put({PreferenceSet{u, {std::string("p") + u}}, false});
  store.rewrite({"a", "b", "c"});
  PreferenceStore reopened(dir.path() / "p.jsonl");
  const auto records = reopened.records();
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].set.user_id, "a");
  EXPECT_EQ(records[2].set.user_id, "c");
}

TEST(Preference, MockClientEncodesFrequentTitleWords) {
  MockLlmClient client(0);
  const auto out = extract_preferences(
      "u", {"Nebula Echo", "Nebula Voyage", "Nebula Signal", "Harbor Echo"}, client, 2, 1, nullptr);
  ASSERT_TRUE(out.preferences);
  EXPECT_NE(out.preferences->preferences[0].find("Nebula"), std::string::npos);
  EXPECT_NE(out.preferences->preferences[1].find("Echo"), std::string::npos);
}

}  // namespace
