#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lane/alignment.hpp"
#include "lane/backbone.hpp"
#include "lane/corpus.hpp"
#include "lane/evaluator.hpp"
#include "lane/llm_client.hpp"
#include "lane/synthetic.hpp"
#include "lane/text_encoder.hpp"
#include "lane/trainer.hpp"

namespace lane {

struct CorpusConfig {
  std::string source = "file";  ///< file | synthetic_rule | synthetic_random
  std::filesystem::path path;
  InputFormat format = InputFormat::tsv;
  std::size_t min_interactions = 5;
  synthetic::Options synthetic;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  CorpusConfig corpus;
  EncoderConfig encoder;
  LlmConfig llm;
  std::size_t m = 5;
  BackboneShape backbone;
  AlignmentShape alignment;
  bool use_alignment = true;
  TrainConfig trainer;
  EvalOptions evaluator;
  std::size_t explain_users = 20;
  int explain_attempts = 2;
  std::string sweep_parameter;
  std::vector<std::string> sweep_values;  ///< JSON-encoded values

  /// Fully resolved configuration as canonical JSON (defaults + file + overrides).
  std::string resolved_json;
  std::string hash() const;
};

/// Defaults as JSON. Nested keys mirror the config file layout.
std::string default_config_json();

/// Parses a JSON config (deep-merged over the defaults), then applies
/// `--set key.path=value` overrides (values parse as JSON, else as strings)
/// and the optional seed. Unknown keys and invalid values throw ConfigError.
/// Relative paths are taken relative to `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed = std::nullopt,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          std::optional<std::uint64_t> seed = std::nullopt,
                          const std::vector<std::string>& overrides = {});

/// Re-resolves `config` with extra overrides on top of its resolved JSON.
RunConfig with_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace lane
