#include "lane/preference.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/random.hpp"
#include "lane/text_util.hpp"

namespace lane {

using nlohmann::json;

std::string render_preference_list(const std::vector<std::string>& preferences) {
  std::ostringstream out;
  for (std::size_t i = 0; i < preferences.size(); ++i) {
    out << (i + 1) << ". " << preferences[i] << '\n';
  }
  return out.str();
}

std::string render_preference_prompt(const std::vector<std::string>& titles, std::size_t m) {
  if (titles.empty()) throw UserError("render_preference_prompt: empty interaction sequence");
  if (m == 0) throw ConfigError("render_preference_prompt: m must be positive");
  std::ostringstream p;
  p << "### Task\n"
    << "Read the user's historical interaction sequence below and summarize the user's tastes as "
       "exactly "
    << m << (m == 1 ? " preference" : " distinct preferences") << ".\n\n";
  p << "### Role\n"
    << "You are a seasoned expert at analyzing and capturing user preferences from interaction "
       "histories.\n\n";
  p << "### Requirements\n"
    << "1. Use what you know about each item (genre, theme, style, audience), not only its title.\n"
    << "2. Make the preferences diverse: each one should describe a different aspect of the "
       "user's taste.\n"
    << "3. Write each preference as a short phrase of at most " << kMaxPreferenceLength
    << " characters.\n"
    << "4. Answer with the standard template only, with nothing before or after it.\n\n";
  p << "### Standard Template\n";
  for (std::size_t i = 1; i <= m; ++i) p << i << ". <preference " << i << ">\n";
  p << "\n### Historical Interaction Sequence\n";
  for (const auto& t : titles) p << "- " << t << '\n';
  return p.str();
}

std::vector<std::string> parse_preference_response(const std::string& raw, std::size_t m) {
  if (text::trim(raw).empty()) throw MalformedResponse("empty preference response");
  static const std::regex numbered(R"(^\s*(\d+)\s*[.)]\s*(.*)$)");
  std::vector<std::string> out;
  std::size_t expected = 1;
  for (const auto& line : text::split_lines(text::strip_markdown(raw))) {
    std::smatch match;
    if (!std::regex_match(line, match, numbered)) continue;
    const auto number = std::stoul(match[1].str());
    if (number != expected) {
      throw MalformedResponse("preference numbering jumps to " + std::to_string(number) +
                              " where " + std::to_string(expected) + " was expected");
    }
    std::string pref = text::trim(match[2].str());
    if (pref.empty()) throw MalformedResponse("preference " + std::to_string(number) + " is blank");
    if (pref.size() > kMaxPreferenceLength) {
      throw MalformedResponse("preference " + std::to_string(number) + " exceeds " +
                              std::to_string(kMaxPreferenceLength) + " characters");
    }
    out.push_back(std::move(pref));
    ++expected;
  }
  if (out.size() != m) {
    throw MalformedResponse("expected " + std::to_string(m) + " preferences, found " +
                            std::to_string(out.size()));
  }
  return out;
}

std::string prompt_hash(const std::string& prompt) { return text::hex64(fnv1a64(prompt)); }

// ---------------------------------------------------------------------------

namespace {

json to_json(const PreferenceStore::Record& r) {
  return {{"user_id", r.set.user_id},
          {"preferences", r.set.preferences},
          {"source", to_string(r.set.source)},
          {"raw_response", r.set.raw_response},
          {"prompt_hash", r.set.prompt_hash},
          {"dropped", r.dropped}};
}

PreferenceStore::Record from_json(const json& j) {
  PreferenceStore::Record r;
  r.set.user_id = j.at("user_id").get<std::string>();
  r.set.preferences = j.at("preferences").get<std::vector<std::string>>();
  r.set.source = parse_preference_source(j.at("source").get<std::string>());
  r.set.raw_response = j.value("raw_response", "");
  r.set.prompt_hash = j.value("prompt_hash", "");
  r.dropped = j.value("dropped", false);
  return r;
}

}  // namespace

PreferenceStore::PreferenceStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      Record r = from_json(json::parse(line));
      by_user_[r.set.user_id] = records_.size();
      records_.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(line_no, "preference cache " + path_.string() + ": " + e.what());
    }
  }
}

std::optional<PreferenceStore::Record> PreferenceStore::find(const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  auto it = by_user_.find(user_id);
  if (it == by_user_.end()) return std::nullopt;
  return records_[it->second];
}

void PreferenceStore::put(const Record& record) {
  std::lock_guard lock(mutex_);
  if (auto it = by_user_.find(record.set.user_id); it != by_user_.end()) {
    records_[it->second] = record;
  } else {
    by_user_[record.set.user_id] = records_.size();
    records_.push_back(record);
  }
  if (!path_.empty()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw UserError("cannot append to preference cache " + path_.string());
    out << to_json(record).dump() << '\n';
  }
}

std::size_t PreferenceStore::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::vector<PreferenceStore::Record> PreferenceStore::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

void PreferenceStore::rewrite(const std::vector<std::string>& user_order) {
  std::lock_guard lock(mutex_);
  std::vector<Record> ordered;
  ordered.reserve(records_.size());
  std::vector<bool> taken(records_.size(), false);
  for (const auto& user : user_order) {
    auto it = by_user_.find(user);
    if (it == by_user_.end() || taken[it->second]) continue;
    taken[it->second] = true;
    ordered.push_back(records_[it->second]);
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!taken[i]) ordered.push_back(records_[i]);
  }
  records_ = std::move(ordered);
  by_user_.clear();
  for (std::size_t i = 0; i < records_.size(); ++i) by_user_[records_[i].set.user_id] = i;
  if (path_.empty()) return;
  const auto tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write " + tmp);
    for (const auto& r : records_) out << to_json(r).dump() << '\n';
  }
  std::filesystem::rename(tmp, path_);
}

ExtractionOutcome extract_preferences(const std::string& user_id,
                                      const std::vector<std::string>& titles, LlmClient& client,
                                      std::size_t m, int max_attempts, PreferenceStore* store) {
  ExtractionOutcome outcome;
  if (store != nullptr) {
    if (auto cached = store->find(user_id)) {
      if (cached->dropped) {
        outcome.dropped = true;
        outcome.from_cache = true;
        return outcome;
      }
      if (cached->set.preferences.size() == m) {
        outcome.preferences = cached->set;
        outcome.from_cache = true;
        return outcome;
      }
    }
  }
  if (max_attempts < 1) throw ConfigError("llm.max_retries must be at least 1");

  const std::string prompt = render_preference_prompt(titles, m);
  const std::string hash = prompt_hash(prompt);
  std::string last_raw;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    outcome.attempts = attempt;
    try {
      last_raw = client.complete(prompt);
    } catch (const LlmError& e) {
      throw LlmError("user '" + user_id + "': " + e.what());
    }
    try {
      PreferenceSet set{user_id, parse_preference_response(last_raw, m), client.source(), last_raw,
                        hash};
      if (store != nullptr) store->put({set, false});
      outcome.preferences = std::move(set);
      return outcome;
    } catch (const MalformedResponse& e) {
      outcome.last_error = e.what();
    }
  }
  outcome.dropped = true;
  if (store != nullptr) {
    store->put({PreferenceSet{user_id, {}, client.source(), last_raw, hash}, true});
  }
  return outcome;
}

}  // namespace lane
