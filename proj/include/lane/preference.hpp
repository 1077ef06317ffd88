#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lane/llm_client.hpp"

namespace lane {

inline constexpr std::size_t kMaxPreferenceLength = 200;

struct PreferenceSet {
  std::string user_id;
  std::vector<std::string> preferences;  ///< row order of the preference embedding matrix
  PreferenceSource source = PreferenceSource::mock;
  std::string raw_response;
  std::string prompt_hash;
};

/// Section headers of the zero-shot preference prompt, in order.
inline constexpr const char* kPreferencePromptSections[] = {
    "Task", "Role", "Requirements", "Standard Template", "Historical Interaction Sequence"};

/// Zero-shot prompt asking for exactly m preferences as a numbered list.
std::string render_preference_prompt(const std::vector<std::string>& titles, std::size_t m);

/// Renders preferences in the standard template ("1. <preference>" per line).
std::string render_preference_list(const std::vector<std::string>& preferences);

/// Extracts exactly m preferences from a standard-template answer. Numbered
/// lines must run 1..m; surrounding prose and markdown emphasis are ignored.
/// Throws MalformedResponse on any other count, gap, blank or over-long item.
std::vector<std::string> parse_preference_response(const std::string& raw, std::size_t m);

/// Hex FNV-1a of a prompt, stored with cached answers.
std::string prompt_hash(const std::string& prompt);

/// Per-user cache, one JSON object per line:
///   {"user_id", "preferences": [..], "source", "raw_response", "prompt_hash", "dropped"}
/// Records are appended as they are produced; the last record for a user wins.
class PreferenceStore {
 public:
  PreferenceStore() = default;  ///< in-memory only
  explicit PreferenceStore(std::filesystem::path path);

  struct Record {
    PreferenceSet set;
    bool dropped = false;
  };

  std::optional<Record> find(const std::string& user_id) const;
  void put(const Record& record);
  std::size_t size() const;
  std::vector<Record> records() const;
  /// Rewrites the backing file with one record per user, ordered by
  /// `user_order` (users not listed keep their relative order at the end).
  void rewrite(const std::vector<std::string>& user_order);

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> by_user_;
};

struct ExtractionOutcome {
  std::optional<PreferenceSet> preferences;
  bool dropped = false;
  bool from_cache = false;
  int attempts = 0;  ///< client calls made by this invocation
  std::string last_error;
};

/// Prompt -> client -> parse, making at most `max_attempts` client calls
/// while the answer is malformed. A user whose answers all fail is recorded
/// as dropped. Cached outcomes (matching m) are returned without calling
/// the client. Transport errors propagate as LlmError naming the user.
ExtractionOutcome extract_preferences(const std::string& user_id,
                                      const std::vector<std::string>& titles, LlmClient& client,
                                      std::size_t m, int max_attempts, PreferenceStore* store);

}  // namespace lane
