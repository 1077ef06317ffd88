#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lane/llm_client.hpp"
#include "lane/model.hpp"
#include "lane/preference.hpp"

namespace lane {

enum class InteractionLevel { low, medium, high };
std::string to_string(InteractionLevel level);  ///< "Low", "Medium", "High"

struct PreferenceAnalysis {
  std::string preference;
  std::string analysis;
};

struct PreferenceFitness {
  std::string preference;
  double fitness = 0.0;  ///< clamped into [0, 1]
  std::string reason;
  bool clamped = false;  ///< the response gave a value outside [0, 1]
};

/// Four-step chain-of-thought answer.
struct ExplanationRecord {
  std::vector<PreferenceAnalysis> step1;
  std::string item_introduction;
  std::vector<PreferenceFitness> step2;
  InteractionLevel probability = InteractionLevel::medium;
  std::string probability_reason;
  std::string recommendation;
  std::vector<double> echoed_weights;  ///< weights as rendered in the prompt
};

/// Renders weights with 4 decimals, the precision used in prompts.
std::string format_weight(double w);

/// Fills the four-step prompt. Each preference appears as "<i>. <preference> (weight: 0.1234)".
/// Throws UserError when preferences and weights differ in length.
std::string render_cot_prompt(const std::vector<std::string>& titles,
                              const std::vector<std::string>& preferences,
                              const std::vector<double>& omega, const std::string& target_title);

/// Fields recovered from a prompt produced by render_cot_prompt.
struct CotPromptFields {
  std::vector<std::string> history;
  std::vector<std::string> preferences;
  std::vector<double> weights;
  std::string target;
};
CotPromptFields parse_cot_prompt(const std::string& prompt);

/// Canonical answer text for a record (the template the prompt asks for).
std::string render_explanation_response(const ExplanationRecord& record);

/// Section-driven parse of an answer with m preferences. Requires the headers
/// "Step 1:" .. "Step 4:" and the labels "Preference Fitness",
/// "Interaction probability" and "Recommendation"; throws MalformedResponse
/// naming the first missing piece.
ExplanationRecord parse_explanation(const std::string& raw, std::size_t m);

struct ExplanationOutcome {
  std::string user_id;
  std::string target;
  std::vector<double> omega;
  std::optional<ExplanationRecord> record;  ///< empty when every attempt was malformed
  std::string raw;
  std::string prompt_hash;
  int attempts = 0;
  std::string last_error;
};

struct ExplanationRequest {
  std::string user_id;
  std::vector<std::string> history_titles;
  PreferenceSet preferences;
  Matrix P;  ///< embeddings of preferences, same row order
  std::vector<ItemIndex> history;
  std::string target_title;
};

/// omega from the trained projections at the last real position, then
/// render -> client -> parse with up to max_attempts calls. The model is read-only.
ExplanationOutcome generate_explanation(const ExplanationRequest& request, const LaneModel& model,
                                        LlmClient& client, int max_attempts);

/// JSONL: {user_id, target, omega[], steps{}, raw, prompt_hash, available}.
std::string explanation_json(const ExplanationOutcome& outcome);

class ExplanationWriter {
 public:
  explicit ExplanationWriter(std::filesystem::path path);
  void append(const ExplanationOutcome& outcome);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

}  // namespace lane
