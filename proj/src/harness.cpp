#include "lane/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/explainer.hpp"
#include "lane/preference.hpp"
#include "lane/synthetic.hpp"
#include "lane/text_util.hpp"

#ifndef LANE_VERSION
#define LANE_VERSION "0.0.0"
#endif
#ifndef LANE_GIT_REVISION
#define LANE_GIT_REVISION "unknown"
#endif

namespace lane {

using nlohmann::json;
namespace fs = std::filesystem;

Command parse_command(const std::string& name) {
  if (name == "prepare") return Command::prepare;
  if (name == "extract-prefs") return Command::extract_prefs;
  if (name == "train") return Command::train;
  if (name == "evaluate") return Command::evaluate;
  if (name == "explain") return Command::explain;
  if (name == "sweep") return Command::sweep;
  throw ConfigError("unknown command '" + name + "'");
}

std::string to_string(Command c) {
  switch (c) {
    case Command::prepare: return "prepare";
    case Command::extract_prefs: return "extract-prefs";
    case Command::train: return "train";
    case Command::evaluate: return "evaluate";
    case Command::explain: return "explain";
    case Command::sweep: return "sweep";
  }
  return "?";
}

RunLayout::RunLayout(const fs::path& output_dir)
    : root(output_dir),
      data(output_dir / "data"),
      preferences(output_dir / "preferences"),
      model(output_dir / "model"),
      eval(output_dir / "eval"),
      explanations(output_dir / "explanations"),
      sweep(output_dir / "sweep"),
      cache(output_dir / "cache" / "encoder") {}

std::string code_version() { return std::string(LANE_VERSION) + "+" + LANE_GIT_REVISION; }

// ---------------------------------------------------------------------------
// Files

void write_matrix(const fs::path& path, const Matrix& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out.write("LANEMAT1", 8);
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_matrix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot read " + path.string());
  char magic[8];
  std::uint64_t dims[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, "LANEMAT1", 8) != 0) throw IntegrityError(path.string() + " is not a matrix file");
  Matrix m(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw IntegrityError("truncated matrix file " + path.string());
  return m;
}

namespace {

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path.string());
  out << content;
}

void write_manifest(const fs::path& dir, Command command, const RunConfig& config, json extra) {
  json m;
  m["command"] = to_string(command);
  m["config_hash"] = config.hash();
  m["code_version"] = code_version();
  m["seed"] = config.seed;
  m["details"] = std::move(extra);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void require(const fs::path& path, const std::string& what, Command producer) {
  if (!fs::exists(path)) throw MissingArtifact(what + " not found at " + path.string(), to_string(producer));
}

std::unique_ptr<TextEncoder> encoder_for(const RunConfig& config) { return make_text_encoder(config.encoder); }

// ---------------------------------------------------------------------------
// Loaded run state

struct PreparedData {
  ItemCatalog catalog;
  SplitDataset split;
  Matrix M;
};

PreparedData load_prepared(const RunLayout& layout) {
  require(layout.data / "manifest.json", "prepared corpus", Command::prepare);
  PreparedData p;
  p.catalog = read_catalog_jsonl(layout.data / "catalog.jsonl");
  p.split = read_split_jsonl(layout.data / "split.jsonl", p.catalog.size());
  p.M = read_matrix(layout.data / "item_embeddings.bin");
  if (p.M.rows() != p.catalog.size() + 1) {
    throw IntegrityError("item embeddings do not match the catalog; rerun `lane prepare`");
  }
  return p;
}

struct LoadedPreferences {
  std::unordered_map<std::string, PreferenceSet> sets;
  std::set<std::string> dropped;
  PreferenceEmbeddings embeddings;
};

LoadedPreferences load_preferences(const RunLayout& layout, const RunConfig& config) {
  require(layout.preferences / "manifest.json", "preference cache", Command::extract_prefs);
  LoadedPreferences out;
  PreferenceStore store(layout.preferences / "preferences.jsonl");
  auto encoder = encoder_for(config);
  EmbeddingCache cache(layout.cache);
  for (const auto& r : store.records()) {
    if (r.dropped) {
      out.dropped.insert(r.set.user_id);
      continue;
    }
    out.embeddings.emplace(r.set.user_id, encode_texts(r.set.preferences, *encoder, &cache));
    out.sets.emplace(r.set.user_id, r.set);
  }
  return out;
}

SplitDataset without_users(const SplitDataset& split, const std::set<std::string>& dropped) {
  SplitDataset out;
  out.item_count = split.item_count;
  for (const auto& u : split.users) {
    if (!dropped.contains(u.user_id)) out.users.push_back(u);
  }
  return out;
}

std::vector<std::string> titles_of(const ItemCatalog& catalog, const std::vector<ItemIndex>& items,
                                   std::size_t last_n) {
  const std::size_t start = items.size() > last_n ? items.size() - last_n : 0;
  std::vector<std::string> out;
  for (std::size_t i = start; i < items.size(); ++i) out.push_back(catalog.at(items[i]).title);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_prepare(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  LoadedCorpus raw;
  if (config.corpus.source == "file") {
    if (!fs::exists(config.corpus.path)) throw UserError("corpus file not found: " + config.corpus.path.string());
    raw = load_interactions(config.corpus.path, config.corpus.format);
  } else if (config.corpus.source == "synthetic_rule") {
    raw = synthetic::rule_corpus(config.corpus.synthetic);
  } else {
    raw = synthetic::random_corpus(config.corpus.synthetic);
  }
  const InteractionLog filtered = kcore_filter(raw.log, config.corpus.min_interactions);
  if (filtered.empty()) {
    throw UserError("no interactions survive " + std::to_string(config.corpus.min_interactions) +
                    "-core filtering");
  }
  const ItemCatalog catalog = compact_catalog(filtered, raw.catalog);
  const SplitDataset split = leave_one_out_split(filtered, catalog);

  auto encoder = encoder_for(config);
  EmbeddingCache cache(layout.cache);
  const Matrix M = encode_titles(catalog, *encoder, &cache);
  cache.flush();

  fs::create_directories(layout.data);
  write_log_jsonl(layout.data / "log.jsonl", filtered, catalog);
  write_catalog_jsonl(layout.data / "catalog.jsonl", catalog);
  write_split_jsonl(layout.data / "split.jsonl", split);
  write_matrix(layout.data / "item_embeddings.bin", M);

  std::size_t eval_users = 0;
  for (const auto& u : split.users) eval_users += u.test ? 1 : 0;
  write_manifest(layout.data, Command::prepare, config,
                 {{"raw_events", raw.log.size()},
                  {"events", filtered.size()},
                  {"users", split.users.size()},
                  {"items", catalog.size()},
                  {"eval_users", eval_users},
                  {"encoder", encoder->name()},
                  {"dim", encoder->dim()}});
  log << "prepare: " << filtered.size() << " of " << raw.log.size() << " events kept, "
      << split.users.size() << " users (" << eval_users << " with valid/test), " << catalog.size()
      << " items, d=" << encoder->dim() << '\n';
}

void cmd_extract_prefs(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  const PreparedData data = load_prepared(layout);
  fs::create_directories(layout.preferences);
  PreferenceStore store(layout.preferences / "preferences.jsonl");
  auto client = make_llm_client(config.llm);

  std::vector<const UserSplit*> users;
  for (const auto& u : data.split.users) {
    if (!u.train.empty()) users.push_back(&u);
  }
  std::vector<ExtractionOutcome> outcomes(users.size());
  std::vector<std::string> errors(users.size());
  const auto count = static_cast<std::ptrdiff_t>(users.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const UserSplit& u = *users[static_cast<std::size_t>(i)];
    try {
      // Training prefix only: validation and test items never reach the prompt.
      outcomes[static_cast<std::size_t>(i)] =
          extract_preferences(u.user_id, titles_of(data.catalog, u.train, config.backbone.n), *client,
                              config.m, config.llm.max_retries, &store);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw LlmError(e);
  }
  std::vector<std::string> order;
  for (const auto* u : users) order.push_back(u->user_id);
  store.rewrite(order);

  std::size_t extracted = 0, cached = 0, calls = 0;
  json dropped = json::array();
  for (std::size_t i = 0; i < users.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.dropped) dropped.push_back(users[i]->user_id);
    else ++extracted;
    cached += o.from_cache ? 1 : 0;
    calls += static_cast<std::size_t>(o.attempts);
  }
  write_manifest(layout.preferences, Command::extract_prefs, config,
                 {{"users", users.size()},
                  {"with_preferences", extracted},
                  {"dropped", dropped},
                  {"from_cache", cached},
                  {"llm_calls", calls},
                  {"llm", client->name()},
                  {"m", config.m}});
  log << "extract-prefs: " << extracted << " users with " << config.m << " preferences, "
      << dropped.size() << " dropped, " << cached << " from cache, " << calls << " LLM calls\n";
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  const PreparedData data = load_prepared(layout);
  LoadedPreferences prefs;
  if (config.use_alignment || fs::exists(layout.preferences / "manifest.json")) {
    prefs = load_preferences(layout, config);
  }
  const SplitDataset split = without_users(data.split, prefs.dropped);

  Rng rng(derive_seed(config.seed, fnv1a64("model:init")));
  const LaneModel initial = init_model(data.M, config.backbone, config.alignment, config.use_alignment, rng);

  fs::create_directories(layout.model);
  std::ofstream train_log(layout.model / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  TrainResult result = train_model(split, initial, prefs.embeddings, config.trainer, [&](const EpochLog& e) {
    train_log << epoch_log_json(e) << '\n';
    train_log.flush();
    log << "epoch " << e.epoch << ": loss " << text::fixed(e.train_loss, 4) << ", valid NDCG@10 "
        << text::fixed(e.valid_ndcg10, 4) << ", HR@10 " << text::fixed(e.valid_hr10, 4) << '\n';
  });
  result.best.config_json = json::parse(config.resolved_json).dump();
  save_checkpoint(layout.model, result.best);
  write_manifest(layout.model, Command::train, config,
                 {{"epochs_run", result.epochs_run},
                  {"best_epoch", result.best.epoch},
                  {"best_valid_ndcg10", result.best.best_valid_ndcg10},
                  {"stopped_early", result.stopped_early},
                  {"use_alignment", config.use_alignment},
                  {"parameters", result.best.model.backbone.parameter_count() +
                                     (config.use_alignment ? result.best.model.alignment.parameter_count() : 0)}});
  log << "train: " << result.epochs_run << " epochs, best epoch " << result.best.epoch
      << " (valid NDCG@10 " << text::fixed(result.best.best_valid_ndcg10, 4) << ")\n";
}

EvaluationResult evaluate_run(const RunConfig& config) {
  const RunLayout layout(config.output_dir);
  const PreparedData data = load_prepared(layout);
  const Checkpoint ckpt = load_checkpoint(layout.model);
  if (ckpt.model.item_count() != data.catalog.size()) {
    throw IntegrityError("checkpoint was trained on a different catalog; rerun `lane train`");
  }
  LoadedPreferences prefs;
  if (ckpt.model.use_alignment || fs::exists(layout.preferences / "manifest.json")) {
    prefs = load_preferences(layout, config);
  }
  return evaluate_model(ckpt.model, without_users(data.split, prefs.dropped), prefs.embeddings,
                        config.evaluator);
}

void cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  require(layout.model / "checkpoint.json", "checkpoint", Command::train);
  const EvaluationResult result = evaluate_run(config);
  write_metrics_json(layout.eval / "metrics.json", result);
  write_per_user_csv(layout.eval / "per_user.csv", result);
  write_manifest(layout.eval, Command::evaluate, config,
                 {{"split", to_string(result.split)},
                  {"users", result.per_user.size()},
                  {"skipped_missing_preferences", result.skipped_missing_preferences}});
  log << "evaluate (" << to_string(result.split) << ", " << result.per_user.size() << " users):";
  for (const auto& r : result.reports) {
    log << " HR@" << r.k << ' ' << text::fixed(r.hr_at_k, 4) << " NDCG@" << r.k << ' '
        << text::fixed(r.ndcg_at_k, 4);
  }
  if (result.skipped_missing_preferences > 0) {
    log << " (" << result.skipped_missing_preferences << " users skipped: no preferences)";
  }
  log << '\n';
}

void cmd_explain(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  require(layout.model / "checkpoint.json", "checkpoint", Command::train);
  const PreparedData data = load_prepared(layout);
  const Checkpoint ckpt = load_checkpoint(layout.model);
  const LoadedPreferences prefs = load_preferences(layout, config);
  auto client = make_llm_client(config.llm);

  std::vector<ExplanationRequest> requests;
  for (const auto& u : data.split.users) {
    if (requests.size() >= config.explain_users) break;
    if (!u.test) continue;
    auto set = prefs.sets.find(u.user_id);
    if (set == prefs.sets.end()) continue;
    ExplanationRequest r;
    r.user_id = u.user_id;
    r.history = u.history_before_test();
    r.history_titles = titles_of(data.catalog, r.history, ckpt.model.sequence_length());
    r.preferences = set->second;
    r.P = prefs.embeddings.at(u.user_id);
    r.target_title = data.catalog.at(*u.test).title;
    requests.push_back(std::move(r));
  }

  std::vector<ExplanationOutcome> outcomes(requests.size());
  std::vector<std::string> errors(requests.size());
  const auto count = static_cast<std::ptrdiff_t>(requests.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      outcomes[static_cast<std::size_t>(i)] =
          generate_explanation(requests[static_cast<std::size_t>(i)], ckpt.model, *client, config.explain_attempts);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw LlmError(e);
  }
  ExplanationWriter writer(layout.explanations / "explanations.jsonl");
  std::size_t available = 0;
  for (const auto& o : outcomes) {
    writer.append(o);
    available += o.record ? 1 : 0;
  }
  write_manifest(layout.explanations, Command::explain, config,
                 {{"requested", requests.size()}, {"available", available}, {"llm", client->name()}});
  log << "explain: " << available << " of " << requests.size() << " explanations parsed\n";
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  }
  return s;
}

void cmd_sweep(const RunConfig& config, std::ostream& log) {
  const RunLayout layout(config.output_dir);
  if (config.sweep_values.empty()) throw ConfigError("sweep.values is empty");
  const fs::path dir = layout.sweep / sanitize(config.sweep_parameter);
  std::vector<std::string> labels;
  std::vector<EvaluationResult> results;
  for (const auto& value : config.sweep_values) {
    const std::string label = json::parse(value).is_string() ? json::parse(value).get<std::string>() : value;
    const fs::path run_dir = dir / "runs" / sanitize(label);
    const RunConfig point =
        with_overrides(config, {config.sweep_parameter + "=" + value, "output_dir=" + run_dir.string()});
    log << "sweep: " << config.sweep_parameter << " = " << label << '\n';
    run_pipeline(point, log);
    labels.push_back(label);
    results.push_back(evaluate_run(point));
  }

  std::ostringstream csv;
  csv << "value,users";
  for (std::size_t k : config.evaluator.ks) csv << ",hr@" << k << ",ndcg@" << k;
  csv << '\n';
  std::vector<std::pair<std::string, std::vector<double>>> hr, ndcg;
  for (std::size_t k : config.evaluator.ks) {
    hr.push_back({"HR@" + std::to_string(k), {}});
    ndcg.push_back({"NDCG@" + std::to_string(k), {}});
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    csv << labels[i] << ',' << results[i].per_user.size();
    for (std::size_t j = 0; j < config.evaluator.ks.size(); ++j) {
      const MetricsReport& r = results[i].at(config.evaluator.ks[j]);
      csv << ',' << text::fixed(r.hr_at_k, 6) << ',' << text::fixed(r.ndcg_at_k, 6);
      hr[j].second.push_back(r.hr_at_k);
      ndcg[j].second.push_back(r.ndcg_at_k);
    }
    csv << '\n';
  }
  write_text(dir / "sweep.csv", csv.str());
  write_text(dir / "hr.svg", line_chart_svg("Hit rate vs " + config.sweep_parameter, labels, hr));
  write_text(dir / "ndcg.svg", line_chart_svg("NDCG vs " + config.sweep_parameter, labels, ndcg));
  write_manifest(layout.sweep, Command::sweep, config,
                 {{"parameter", config.sweep_parameter}, {"values", labels}});
  log << "sweep: wrote " << (dir / "sweep.csv").string() << '\n';
}

}  // namespace

void run_command(Command command, const RunConfig& config, std::ostream& log) {
  switch (command) {
    case Command::prepare: return cmd_prepare(config, log);
    case Command::extract_prefs: return cmd_extract_prefs(config, log);
    case Command::train: return cmd_train(config, log);
    case Command::evaluate: return cmd_evaluate(config, log);
    case Command::explain: return cmd_explain(config, log);
    case Command::sweep: return cmd_sweep(config, log);
  }
}

void run_pipeline(const RunConfig& config, std::ostream& log) {
  run_command(Command::prepare, config, log);
  if (config.use_alignment) run_command(Command::extract_prefs, config, log);
  run_command(Command::train, config, log);
  run_command(Command::evaluate, config, log);
}

// ---------------------------------------------------------------------------

std::string line_chart_svg(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  constexpr double W = 640, H = 400, L = 60, R = 130, T = 40, B = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  double hi = 0.0;
  for (const auto& s : series) {
    for (double v : s.second) hi = std::max(hi, v);
  }
  hi = hi <= 0.0 ? 1.0 : std::ceil(hi * 10.0) / 10.0;
  const std::size_t n = x_labels.size();
  auto x_at = [&](std::size_t i) { return n <= 1 ? L + (W - L - R) / 2 : L + (W - L - R) * i / (n - 1.0); };
  auto y_at = [&](double v) { return T + (H - T - B) * (1.0 - v / hi); };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = hi * t / 5.0;
    svg << "<line x1=\"" << L - 4 << "\" y1=\"" << y_at(v) << "\" x2=\"" << W - R << "\" y2=\"" << y_at(v)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << y_at(v) + 4 << "\" text-anchor=\"end\">" << text::fixed(v, 2)
        << "</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    svg << "<text x=\"" << x_at(i) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << esc(x_labels[i])
        << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].second.size(); ++i) {
      svg << (i ? " " : "") << x_at(i) << ',' << y_at(series[s].second[i]);
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < series[s].second.size(); ++i) {
      svg << "<circle cx=\"" << x_at(i) << "\" cy=\"" << y_at(series[s].second[i]) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    svg << "<text x=\"" << W - R + 12 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << color << "\">"
        << esc(series[s].first) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace lane
