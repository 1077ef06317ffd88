#include "lane/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "lane/error.hpp"

namespace lane {

using nlohmann::json;

std::string to_string(EvalSplit s) { return s == EvalSplit::valid ? "valid" : "test"; }

EvalSplit parse_eval_split(const std::string& name) {
  if (name == "valid" || name == "validation") return EvalSplit::valid;
  if (name == "test") return EvalSplit::test;
  throw ConfigError("unknown evaluation split '" + name + "'");
}

std::uint64_t candidate_seed(std::uint64_t seed, EvalSplit split, const std::string& user_id) {
  return derive_seed(seed, fnv1a64(split == EvalSplit::valid ? "eval:valid" : "eval:test"),
                     fnv1a64(user_id));
}

EvalCandidates build_eval_candidates(const UserSplit& user, EvalSplit split, std::size_t item_count,
                                     Rng& rng, const CandidateOptions& options) {
  const std::optional<ItemIndex> target = split == EvalSplit::valid ? user.valid : user.test;
  if (!target) {
    throw ProtocolError("user '" + user.user_id + "' has no " + to_string(split) + " item");
  }
  std::vector<ItemIndex> owned = user.train;
  if (user.valid) owned.push_back(*user.valid);
  if (user.test) owned.push_back(*user.test);
  owned.push_back(*target);
  std::sort(owned.begin(), owned.end());
  owned.erase(std::unique(owned.begin(), owned.end()), owned.end());
  auto is_owned = [&](ItemIndex i) { return std::binary_search(owned.begin(), owned.end(), i); };

  const std::size_t eligible = item_count - std::min(item_count, owned.size());
  std::size_t wanted = options.negatives;
  if (eligible < wanted) {
    if (!options.allow_short_pool) {
      throw ProtocolError("user '" + user.user_id + "': only " + std::to_string(eligible) +
                          " eligible negatives, " + std::to_string(wanted) + " required");
    }
    wanted = eligible;
  }

  EvalCandidates out;
  out.target = *target;
  out.negatives.reserve(wanted);
  if (eligible <= 2 * wanted) {
    std::vector<ItemIndex> pool;
    pool.reserve(eligible);
    for (std::size_t i = 1; i <= item_count; ++i) {
      if (!is_owned(static_cast<ItemIndex>(i))) pool.push_back(static_cast<ItemIndex>(i));
    }
    for (std::size_t i = 0; i < wanted; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.negatives.push_back(pool[i]);
    }
  } else {
    std::set<ItemIndex> chosen;
    while (out.negatives.size() < wanted) {
      const auto i = static_cast<ItemIndex>(1 + rng.below(item_count));
      if (is_owned(i) || !chosen.insert(i).second) continue;
      out.negatives.push_back(i);
    }
  }
  return out;
}

std::size_t rank_of_target(std::span<const double> scores, std::size_t target_pos) {
  if (target_pos >= scores.size()) throw std::out_of_range("rank_of_target: target outside scores");
  const double t = scores[target_pos];
  std::size_t greater = 0;
  for (double s : scores) greater += s > t ? 1 : 0;
  return 1 + greater;
}

MetricsReport compute_metrics(std::span<const std::size_t> ranks, std::size_t k) {
  MetricsReport r;
  r.k = k;
  r.user_count = ranks.size();
  if (ranks.empty()) return r;
  double hits = 0.0;
  double gain = 0.0;
  for (std::size_t rank : ranks) {
    if (rank == 0) throw std::invalid_argument("compute_metrics: ranks are 1-based");
    if (rank <= k) {
      hits += 1.0;
      gain += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  r.hr_at_k = hits / static_cast<double>(ranks.size());
  r.ndcg_at_k = gain / static_cast<double>(ranks.size());
  r.defined = true;
  return r;
}

const MetricsReport& EvaluationResult::at(std::size_t k) const {
  for (const auto& r : reports) {
    if (r.k == k) return r;
  }
  throw std::out_of_range("no metrics computed for k=" + std::to_string(k));
}

EvaluationResult evaluate_model(const LaneModel& model, const SplitDataset& data,
                                const PreferenceEmbeddings& preferences, const EvalOptions& options) {
  EvaluationResult result;
  result.split = options.split;

  struct Job {
    const UserSplit* user;
    const Matrix* P;
  };
  std::vector<Job> jobs;
  for (const auto& u : data.users) {
    const bool has_target = options.split == EvalSplit::valid ? u.valid.has_value() : u.test.has_value();
    if (!has_target) {
      ++result.skipped_no_target;
      continue;
    }
    const Matrix* P = nullptr;
    if (model.use_alignment) {
      auto it = preferences.find(u.user_id);
      if (it == preferences.end()) {
        ++result.skipped_missing_preferences;
        continue;
      }
      P = &it->second;
    }
    jobs.push_back({&u, P});
  }

  result.per_user.resize(jobs.size());
  std::vector<std::string> errors(jobs.size());
  const auto count = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t j = 0; j < count; ++j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    try {
      Rng rng(candidate_seed(options.seed, options.split, job.user->user_id));
      const EvalCandidates cand =
          build_eval_candidates(*job.user, options.split, model.item_count(), rng, options.candidates);
      std::vector<ItemIndex> history = job.user->train;
      if (options.split == EvalSplit::test && job.user->valid) history.push_back(*job.user->valid);
      const std::vector<double> f = last_features(model, history, job.P);
      std::vector<double> scores;
      scores.reserve(cand.negatives.size() + 1);
      scores.push_back(score_candidate(f, model.M.row(static_cast<std::size_t>(cand.target))));
      for (ItemIndex i : cand.negatives) {
        scores.push_back(score_candidate(f, model.M.row(static_cast<std::size_t>(i))));
      }
      result.per_user[static_cast<std::size_t>(j)] = {job.user->user_id, cand.target,
                                                      rank_of_target(scores, 0), scores.size()};
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(j)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ProtocolError(e);
  }

  std::vector<std::size_t> ranks;
  ranks.reserve(result.per_user.size());
  for (const auto& u : result.per_user) ranks.push_back(u.rank);
  for (std::size_t k : options.ks) result.reports.push_back(compute_metrics(ranks, k));
  return result;
}

std::string metrics_json(const EvaluationResult& result) {
  json j;
  j["split"] = to_string(result.split);
  j["user_count"] = result.per_user.size();
  j["skipped_missing_preferences"] = result.skipped_missing_preferences;
  j["skipped_no_target"] = result.skipped_no_target;
  json reports = json::array();
  for (const auto& r : result.reports) {
    json entry = {{"k", r.k}, {"user_count", r.user_count}, {"defined", r.defined}};
    if (r.defined) {
      entry["hr"] = r.hr_at_k;
      entry["ndcg"] = r.ndcg_at_k;
    } else {
      entry["hr"] = nullptr;
      entry["ndcg"] = nullptr;
    }
    reports.push_back(std::move(entry));
  }
  j["metrics"] = std::move(reports);
  return j.dump(2) + "\n";
}

void write_metrics_json(const std::filesystem::path& path, const EvaluationResult& result) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << metrics_json(result);
}

void write_per_user_csv(const std::filesystem::path& path, const EvaluationResult& result) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << "user_id,target,rank,candidates\n";
  for (const auto& u : result.per_user) {
    out << u.user_id << ',' << u.target << ',' << u.rank << ',' << u.candidates << '\n';
  }
}

}  // namespace lane
