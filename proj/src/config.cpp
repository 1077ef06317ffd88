#include "lane/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/random.hpp"
#include "lane/text_util.hpp"

namespace lane {

using nlohmann::json;

namespace {

const char* const kDefaults = R"({
  "seed": 0,
  "output_dir": "runs/default",
  "corpus": {
    "source": "file",
    "path": "",
    "format": "tsv",
    "min_interactions": 5,
    "synthetic": {"users": 200, "items": 50, "min_length": 12, "max_length": 20}
  },
  "encoder": {"name": "mock", "dim": 384, "seed": 0, "endpoint": "", "timeout": 60.0},
  "llm": {
    "name": "mock",
    "endpoint": "",
    "api_key_env": "LANE_LLM_API_KEY",
    "rate_limit": 2.0,
    "timeout": 60.0,
    "max_retries": 2
  },
  "preferences": {"m": 5},
  "sequence": {"n": 50},
  "backbone": {"variant": "self_attention", "blocks": 2, "heads": 1, "dropout": 0.5},
  "alignment": {"enabled": true, "h": 4, "d_k": 384, "dropout": true},
  "trainer": {
    "learning_rate": 0.001,
    "batch_size": 128,
    "max_epochs": 200,
    "patience": 20,
    "freeze_M": false,
    "gradient_groups": 4
  },
  "evaluator": {"k": [5, 10], "negatives": 100, "allow_short_pool": false, "split": "test"},
  "explainer": {"users": 20, "max_attempts": 2},
  "sweep": {"parameter": "preferences.m", "values": [1, 3, 5, 10, 15]}
})";

/// Copies `overlay` onto `base`, refusing keys the defaults do not know.
void merge_checked(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw ConfigError("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (base[key].is_object()) {
      merge_checked(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = text::trim(assignment.substr(0, eq));
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("--set: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("--set: '" + key + "' is a section, not a value");
  *node = std::move(value);
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  const json& v = section != nullptr ? j.at(section).at(key) : j.at(key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: '") + (section != nullptr ? std::string(section) + "." : "") +
                      key + "' has the wrong type (" + v.dump() + ")");
  }
}

std::size_t get_count(const json& j, const char* section, const char* key) {
  const json& v = section != nullptr ? j.at(section).at(key) : j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config: '") + (section != nullptr ? std::string(section) + "." : "") +
                      key + "' must be a non-negative integer (" + v.dump() + ")");
  }
  return v.get<std::size_t>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

RunConfig build(json j, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.seed = get<std::uint64_t>(j, nullptr, "seed");
  c.output_dir = resolve(base_dir, get<std::string>(j, nullptr, "output_dir"));
  if (c.output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  j["output_dir"] = c.output_dir.string();

  c.corpus.source = get<std::string>(j, "corpus", "source");
  if (c.corpus.source != "file" && c.corpus.source != "synthetic_rule" &&
      c.corpus.source != "synthetic_random") {
    throw ConfigError("corpus.source must be file, synthetic_rule or synthetic_random");
  }
  c.corpus.path = resolve(base_dir, get<std::string>(j, "corpus", "path"));
  j["corpus"]["path"] = c.corpus.path.string();
  if (c.corpus.source == "file" && c.corpus.path.empty()) {
    throw ConfigError("corpus.path is required when corpus.source is file");
  }
  c.corpus.format = parse_input_format(get<std::string>(j, "corpus", "format"));
  c.corpus.min_interactions = get_count(j, "corpus", "min_interactions");
  if (c.corpus.min_interactions == 0) throw ConfigError("corpus.min_interactions must be at least 1");
  const json& syn = j.at("corpus").at("synthetic");
  c.corpus.synthetic.users = get_count(syn, nullptr, "users");
  c.corpus.synthetic.items = get_count(syn, nullptr, "items");
  c.corpus.synthetic.min_length = get_count(syn, nullptr, "min_length");
  c.corpus.synthetic.max_length = get_count(syn, nullptr, "max_length");
  c.corpus.synthetic.seed = c.seed;

  c.encoder.name = get<std::string>(j, "encoder", "name");
  c.encoder.dim = get_count(j, "encoder", "dim");
  if (c.encoder.dim == 0) throw ConfigError("encoder.dim must be positive");
  c.encoder.seed = get<std::uint64_t>(j, "encoder", "seed");
  c.encoder.endpoint = get<std::string>(j, "encoder", "endpoint");
  c.encoder.timeout_seconds = get<double>(j, "encoder", "timeout");

  c.llm.name = get<std::string>(j, "llm", "name");
  c.llm.endpoint = get<std::string>(j, "llm", "endpoint");
  c.llm.api_key_env = get<std::string>(j, "llm", "api_key_env");
  c.llm.rate_limit = get<double>(j, "llm", "rate_limit");
  c.llm.timeout_seconds = get<double>(j, "llm", "timeout");
  c.llm.max_retries = get<int>(j, "llm", "max_retries");
  if (c.llm.max_retries < 1) throw ConfigError("llm.max_retries must be at least 1");
  c.llm.seed = c.seed;

  c.m = get_count(j, "preferences", "m");
  if (c.m == 0) throw ConfigError("preferences.m must be positive");

  c.backbone.variant = parse_backbone_variant(get<std::string>(j, "backbone", "variant"));
  c.backbone.n = get_count(j, "sequence", "n");
  if (c.backbone.n == 0) throw ConfigError("sequence.n must be positive");
  c.backbone.d = c.encoder.dim;
  c.backbone.blocks = get_count(j, "backbone", "blocks");
  c.backbone.heads = get_count(j, "backbone", "heads");
  c.backbone.dropout = get<double>(j, "backbone", "dropout");

  c.use_alignment = get<bool>(j, "alignment", "enabled");
  c.alignment.d = c.encoder.dim;
  c.alignment.heads = get_count(j, "alignment", "h");
  c.alignment.d_k = get_count(j, "alignment", "d_k");
  if (c.alignment.heads == 0 || c.alignment.d_k == 0) throw ConfigError("alignment.h and alignment.d_k must be positive");
  c.alignment.dropout = c.backbone.dropout;

  c.trainer.learning_rate = get<double>(j, "trainer", "learning_rate");
  c.trainer.batch_size = get_count(j, "trainer", "batch_size");
  c.trainer.max_epochs = get_count(j, "trainer", "max_epochs");
  c.trainer.patience = get_count(j, "trainer", "patience");
  c.trainer.freeze_M = get<bool>(j, "trainer", "freeze_M");
  c.trainer.gradient_groups = get_count(j, "trainer", "gradient_groups");
  c.trainer.seed = c.seed;
  c.trainer.dropout = c.backbone.dropout;
  c.trainer.alignment_dropout = get<bool>(j, "alignment", "dropout");

  c.evaluator.ks = get<std::vector<std::size_t>>(j, "evaluator", "k");
  if (c.evaluator.ks.empty()) throw ConfigError("evaluator.k must list at least one cutoff");
  for (std::size_t k : c.evaluator.ks) {
    if (k == 0) throw ConfigError("evaluator.k values must be positive");
  }
  c.evaluator.candidates.negatives = get_count(j, "evaluator", "negatives");
  c.evaluator.candidates.allow_short_pool = get<bool>(j, "evaluator", "allow_short_pool");
  c.evaluator.split = parse_eval_split(get<std::string>(j, "evaluator", "split"));
  c.evaluator.seed = derive_seed(c.seed, fnv1a64("evaluator"));
  c.trainer.validation = c.evaluator;
  c.trainer.validation.split = EvalSplit::valid;

  c.explain_users = get_count(j, "explainer", "users");
  c.explain_attempts = get<int>(j, "explainer", "max_attempts");
  if (c.explain_attempts < 1) throw ConfigError("explainer.max_attempts must be at least 1");

  c.sweep_parameter = get<std::string>(j, "sweep", "parameter");
  const json& values = j.at("sweep").at("values");
  if (!values.is_array()) throw ConfigError("sweep.values must be an array");
  for (const auto& v : values) c.sweep_values.push_back(v.dump());

  c.trainer.validate();
  c.resolved_json = j.dump(2);
  return c;
}

}  // namespace

std::string RunConfig::hash() const { return text::hex64(fnv1a64(resolved_json)); }

std::string default_config_json() { return json::parse(kDefaults).dump(2); }

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed,
                           const std::vector<std::string>& overrides) {
  json root = json::parse(kDefaults);
  json user;
  try {
    user = json::parse(json_text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  merge_checked(root, user, "");
  for (const auto& o : overrides) apply_override(root, o);
  if (seed) root["seed"] = *seed;
  try {
    return build(std::move(root), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse_run_config(buf.str(), base, seed, overrides);
}

RunConfig with_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  return parse_run_config(config.resolved_json, config.output_dir.parent_path(), std::nullopt, overrides);
}

}  // namespace lane
