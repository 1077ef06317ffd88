#include "lane/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/explainer.hpp"
#include "lane/http.hpp"
#include "lane/preference.hpp"
#include "lane/random.hpp"
#include "lane/text_util.hpp"

namespace lane {

using nlohmann::json;

std::string to_string(PreferenceSource s) {
  switch (s) {
    case PreferenceSource::llm: return "llm";
    case PreferenceSource::mock: return "mock";
    case PreferenceSource::manual: return "manual";
  }
  return "mock";
}

PreferenceSource parse_preference_source(const std::string& s) {
  if (s == "llm") return PreferenceSource::llm;
  if (s == "mock") return PreferenceSource::mock;
  if (s == "manual") return PreferenceSource::manual;
  throw ConfigError("unknown preference source '" + s + "'");
}

// ---------------------------------------------------------------------------
// Mock client

namespace {

/// Lines of the "### <name>" section of a prompt.
std::vector<std::string> section_lines(const std::string& prompt, const std::string& name) {
  std::vector<std::string> out;
  bool inside = false;
  for (const auto& line : text::split_lines(prompt)) {
    if (line.rfind("### ", 0) == 0) {
      inside = (line.substr(4) == name);
      continue;
    }
    if (inside && !text::trim(line).empty()) out.push_back(line);
  }
  return out;
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "the", "and", "for", "with", "from", "edition", "of", "a", "an", "in", "on", "to", "at",
      "vol", "part", "series", "collection", "complete", "new", "version", "pack", "set"};
  return words;
}

std::vector<std::string> content_words(const std::string& title) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 3 && !std::all_of(cur.begin(), cur.end(), ::isdigit) &&
        !stopwords().contains(cur)) {
      words.push_back(cur);
    }
    cur.clear();
  };
  for (const char ch : title) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::string capitalize(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string mock_preference_answer(const std::string& prompt, std::uint64_t seed) {
  std::vector<std::string> titles;
  for (const auto& line : section_lines(prompt, "Historical Interaction Sequence")) {
    if (line.rfind("- ", 0) == 0) titles.push_back(line.substr(2));
  }
  const std::size_t m = section_lines(prompt, "Standard Template").size();
  std::map<std::string, std::size_t> counts;
  for (const auto& t : titles) {
    for (const auto& w : content_words(t)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  static const char* templates[] = {"Titles about {}", "Interest in {} themes", "Enjoys {} items"};
  const std::string tmpl = templates[seed % 3];
  std::vector<std::string> prefs;
  for (std::size_t i = 0; i < m; ++i) {
    std::string word = i < ranked.size() ? capitalize(ranked[i].first)
                                         : "Varied interest " + std::to_string(i + 1);
    std::string phrase = tmpl;
    phrase.replace(phrase.find("{}"), 2, word);
    prefs.push_back(std::move(phrase));
  }
  return render_preference_list(prefs);
}

std::string mock_explanation_answer(const std::string& prompt, std::uint64_t seed) {
  const CotPromptFields fields = parse_cot_prompt(prompt);
  ExplanationRecord rec;
  double weighted = 0.0;
  double weight_total = 0.0;
  for (std::size_t i = 0; i < fields.preferences.size(); ++i) {
    const std::string& pref = fields.preferences[i];
    rec.step1.push_back({pref, "Several items in the history (for example '" +
                                   (fields.history.empty() ? std::string("none") : fields.history.back()) +
                                   "') reflect an interest in " + pref + "."});
    const std::uint64_t h = derive_seed(seed, fnv1a64(pref), fnv1a64(fields.target));
    const double fitness = static_cast<double>(h % 11) / 10.0;
    rec.step2.push_back({pref, fitness, "Fit of '" + fields.target + "' with " + pref + "."});
    weighted += fields.weights[i] * fitness;
    weight_total += fields.weights[i];
  }
  const double score = weight_total > 0.0 ? weighted / weight_total : 0.0;
  rec.item_introduction = "'" + fields.target + "' is the candidate item under consideration.";
  rec.probability = score < 0.4 ? InteractionLevel::low
                    : score < 0.7 ? InteractionLevel::medium
                                  : InteractionLevel::high;
  rec.probability_reason = "Weighted fitness over the preferences is " + text::fixed(score, 2) + ".";
  rec.recommendation = "Based on your interest in " +
                       (fields.preferences.empty() ? std::string("these items") : fields.preferences.front()) +
                       ", you may enjoy '" + fields.target + "'.";
  return render_explanation_response(rec);
}

}  // namespace

std::string MockLlmClient::complete(const std::string& prompt) {
  if (prompt.find("### Target Item") != std::string::npos) {
    return mock_explanation_answer(prompt, seed_);
  }
  if (prompt.find("### Standard Template") != std::string::npos) {
    return mock_preference_answer(prompt, seed_);
  }
  return "I can only answer preference and explanation prompts.";
}

// ---------------------------------------------------------------------------
// Remote client

RateLimiter::RateLimiter(double requests_per_second) : next_(std::chrono::steady_clock::now()) {
  if (requests_per_second <= 0.0) {
    interval_ = std::chrono::steady_clock::duration::zero();
  } else {
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / requests_per_second));
  }
}

void RateLimiter::acquire() {
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

HttpLlmClient::HttpLlmClient(std::string endpoint, std::string model, std::string api_key,
                             double timeout_seconds, double rate_limit)
    : endpoint_(std::move(endpoint)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      timeout_(timeout_seconds),
      limiter_(rate_limit) {
  if (endpoint_.empty()) throw ConfigError("llm.endpoint is required for remote models");
}

std::string HttpLlmClient::complete(const std::string& prompt) {
  limiter_.acquire();
  json body = {{"model", model_},
               {"temperature", 0},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  HttpHeaders headers;
  if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
  std::string response;
  try {
    response = http_post_json(endpoint_, body.dump(), headers, timeout_);
  } catch (const HttpError& e) {
    throw LlmError(e.what());
  }
  try {
    const json parsed = json::parse(response);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    // Unexpected body shape: hand it back so the caller's parser rejects it.
    return response;
  }
}

std::unique_ptr<LlmClient> make_llm_client(const LlmConfig& config) {
  if (config.name == "mock") return std::make_unique<MockLlmClient>(config.seed);
  std::string key;
  if (!config.api_key_env.empty()) {
    if (const char* env = std::getenv(config.api_key_env.c_str())) key = env;
  }
  return std::make_unique<HttpLlmClient>(config.endpoint, config.name, key, config.timeout_seconds,
                                         config.rate_limit);
}

}  // namespace lane
