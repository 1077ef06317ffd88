#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lane/config.hpp"

namespace lane {

enum class Command { prepare, extract_prefs, train, evaluate, explain, sweep };
Command parse_command(const std::string& name);
std::string to_string(Command c);

/// Artifact directories of one run, all below RunConfig::output_dir.
///   data/          prepare: log.jsonl, catalog.jsonl, split.jsonl, item_embeddings.bin
///   preferences/   extract-prefs: preferences.jsonl
///   model/         train: params.bin, checkpoint.json, train_log.jsonl
///   eval/          evaluate: metrics.json, per_user.csv
///   explanations/  explain: explanations.jsonl
///   sweep/         sweep: <parameter>/sweep.csv, hr.svg, ndcg.svg, runs/<value>/...
///   cache/         encoder cache shared by all commands
/// Every artifact directory also holds manifest.json with the config hash and code version.
struct RunLayout {
  std::filesystem::path root, data, preferences, model, eval, explanations, sweep, cache;
  explicit RunLayout(const std::filesystem::path& output_dir);
};

/// "<version>+<git revision>" baked in at build time.
std::string code_version();

/// Runs one command. Missing upstream artifacts throw MissingArtifact naming
/// the command to run first.
void run_command(Command command, const RunConfig& config, std::ostream& log);

/// prepare, extract-prefs (when alignment is enabled), train, evaluate.
void run_pipeline(const RunConfig& config, std::ostream& log);

/// Binary matrix file: "LANEMAT1", uint64 rows, uint64 cols, row-major float64.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

/// Line chart as a standalone SVG document.
std::string line_chart_svg(const std::string& title, const std::vector<std::string>& x_labels,
                           const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace lane
