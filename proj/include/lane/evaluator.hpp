#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lane/corpus.hpp"
#include "lane/model.hpp"
#include "lane/random.hpp"

namespace lane {

enum class EvalSplit { valid, test };
std::string to_string(EvalSplit s);
EvalSplit parse_eval_split(const std::string& name);

struct EvalCandidates {
  ItemIndex target = kPadIndex;
  std::vector<ItemIndex> negatives;
};

struct CandidateOptions {
  std::size_t negatives = 100;
  /// Use every eligible item when fewer than `negatives` exist instead of
  /// failing (small synthetic catalogs).
  bool allow_short_pool = false;
};

/// Distinct negatives drawn uniformly without replacement from the items the
/// user never interacted with (train, valid and test), excluding the target.
/// Throws ProtocolError naming the user when the pool is too small.
EvalCandidates build_eval_candidates(const UserSplit& user, EvalSplit split, std::size_t item_count,
                                     Rng& rng, const CandidateOptions& options = {});

/// Stream used for a user's candidates; fixed per (seed, split, user).
std::uint64_t candidate_seed(std::uint64_t seed, EvalSplit split, const std::string& user_id);

/// 1 + number of scores strictly greater than scores[target_pos]; ties favor the target.
std::size_t rank_of_target(std::span<const double> scores, std::size_t target_pos);

struct MetricsReport {
  std::size_t k = 10;
  double hr_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::size_t user_count = 0;
  bool defined = false;  ///< false when there were no users
};

MetricsReport compute_metrics(std::span<const std::size_t> ranks, std::size_t k);

struct UserRank {
  std::string user_id;
  ItemIndex target = kPadIndex;
  std::size_t rank = 0;
  std::size_t candidates = 0;
};

struct EvalOptions {
  EvalSplit split = EvalSplit::test;
  std::vector<std::size_t> ks = {5, 10};
  std::uint64_t seed = 0;
  CandidateOptions candidates;
};

struct EvaluationResult {
  EvalSplit split = EvalSplit::test;
  std::vector<MetricsReport> reports;  ///< one per requested k
  std::vector<UserRank> per_user;      ///< user order of the split dataset
  std::size_t skipped_missing_preferences = 0;
  std::size_t skipped_no_target = 0;

  const MetricsReport& at(std::size_t k) const;
};

/// Scores target + negatives with features from the full observed prefix
/// (train for valid, train + valid for test). Users without preference
/// embeddings are skipped and counted when alignment is enabled.
EvaluationResult evaluate_model(const LaneModel& model, const SplitDataset& data,
                                const PreferenceEmbeddings& preferences, const EvalOptions& options);

std::string metrics_json(const EvaluationResult& result);
void write_metrics_json(const std::filesystem::path& path, const EvaluationResult& result);
void write_per_user_csv(const std::filesystem::path& path, const EvaluationResult& result);

}  // namespace lane
