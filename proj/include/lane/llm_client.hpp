#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>

namespace lane {

enum class PreferenceSource { llm, mock, manual };
std::string to_string(PreferenceSource s);
PreferenceSource parse_preference_source(const std::string& s);

/// Text-in/text-out completion endpoint. complete() may be called from
/// several threads; transport failures throw LlmError.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string name() const = 0;
  virtual PreferenceSource source() const = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Deterministic offline client. Recognizes the preference prompt and the
/// explanation prompt rendered by this library and answers each in its
/// standard template; the answer depends only on (prompt, seed).
///
/// Preference answers: the m most frequent content words over the history
/// titles (ties alphabetical), each rendered as a short phrase.
/// Explanation answers: fitness values derived from a hash of
/// (preference, target, seed); the probability label follows the
/// weight-averaged fitness (< 0.4 Low, < 0.7 Medium, else High).
class MockLlmClient final : public LlmClient {
 public:
  explicit MockLlmClient(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "mock"; }
  PreferenceSource source() const override { return PreferenceSource::mock; }
  std::string complete(const std::string& prompt) override;

 private:
  std::uint64_t seed_;
};

/// Minimum spacing between request starts, shared by all callers.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mutex_;
  std::chrono::steady_clock::duration interval_;
  std::chrono::steady_clock::time_point next_;
};

/// OpenAI-compatible chat-completions client.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(std::string endpoint, std::string model, std::string api_key, double timeout_seconds,
                double rate_limit);
  std::string name() const override { return model_; }
  PreferenceSource source() const override { return PreferenceSource::llm; }
  std::string complete(const std::string& prompt) override;

 private:
  std::string endpoint_;
  std::string model_;
  std::string api_key_;
  double timeout_;
  RateLimiter limiter_;
};

struct LlmConfig {
  std::string name = "mock";  ///< "mock" or a remote model name
  std::string endpoint;       ///< chat-completions URL for remote models
  std::string api_key_env = "LANE_LLM_API_KEY";
  double rate_limit = 2.0;  ///< requests per second
  double timeout_seconds = 60.0;
  int max_retries = 2;
  std::uint64_t seed = 0;
};

std::unique_ptr<LlmClient> make_llm_client(const LlmConfig& config);

}  // namespace lane
