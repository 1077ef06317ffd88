// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grad_check.hpp"
#include "json.hpp"
#include "lane/alignment.hpp"
#include "lane/config.hpp"
#include "lane/corpus.hpp"
#include "lane/error.hpp"
#include "lane/evaluator.hpp"
#include "lane/harness.hpp"
#include "lane/kernels.hpp"
#include "lane/model.hpp"
#include "lane/synthetic.hpp"
#include "lane/text_encoder.hpp"
#include "lane/trainer.hpp"
#include "oracles.hpp"
#include "tiny_model.hpp"

namespace {

using namespace lane;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void perturb(AlignmentParams& p, Rng& rng) {
  for (auto& [name, t] : p.tensors()) {
    for (double& x : t->values()) x += rng.uniform(-0.3, 0.3);
  }
}

Outcome alignment_vs_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    AlignmentShape s;
    s.d = 2 + rng.below(5);
    s.heads = 1 + rng.below(2);
    s.d_k = 1 + rng.below(4);
    const std::size_t n = 1 + rng.below(4), m = 1 + rng.below(3);
    AlignmentParams p = init_alignment(s, rng);
    perturb(p, rng);
    const Matrix Q = oracle::random_matrix(n, s.d, rng), P = oracle::random_matrix(m, s.d, rng);
    const auto got = align(Q, P, p);
    const auto [F, att] = oracle::align(Q, P, p);
    worst = std::max({worst, oracle::max_abs_diff(F, got.F), oracle::max_abs_diff(att, got.att)});
    const auto q = oracle::row0(Q);
    const auto omega = preference_attention_weights(q, P, p);
    const auto expected = oracle::preference_weights(q, P, p);
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(omega[j] - expected[j]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 10.0, fmt("max |diff| %.3g", worst) + fmt(", %.2f s", secs)};
}

Outcome end_to_end_gradients() {
  std::size_t checked = 0;
  double worst = 0.0;
  for (auto variant : {BackboneVariant::self_attention, BackboneVariant::gated_recurrent}) {
    oracle::TinySpec spec;
    spec.variant = variant;
    LaneModel model = oracle::tiny_model(spec);
    const Matrix P = oracle::tiny_preferences(3, spec.d, 17);
    Rng rng(23);
    const auto ex = *make_training_example({4, 1, 7, 2, 8, 3}, spec.n, spec.items, rng);
    ModelGradients grads(model);
    {
      ag::Tape tape;
      tape.backward(example_loss(tape, model, ex, &P, grads.sinks(true), nullptr));
    }
    auto loss = [&]() {
      ag::Tape tape(false);
      return example_loss(tape, model, ex, &P, {}, nullptr).value()(0, 0);
    };
    std::vector<std::pair<std::string, Matrix*>> params, grad_list;
    for (auto& t : model.backbone.tensors()) params.push_back(t);
    for (auto& t : grads.backbone.tensors()) grad_list.push_back(t);
    for (auto& t : model.alignment.tensors()) params.push_back({"a." + t.first, t.second});
    for (auto& t : grads.alignment.tensors()) grad_list.push_back({"a." + t.first, t.second});
    auto analytic = [&](const std::string& name, std::size_t e) {
      for (auto& [n, g] : grad_list) {
        if (n == name) return g->data()[e];
      }
      return 0.0;
    };
    for (const auto& s : oracle::sample_gradients(params, analytic, loss, 3, rng)) {
      worst = std::max(worst, s.error);
      ++checked;
    }
    for (const auto& [row, g] : grads.embedding.rows()) {
      for (std::size_t c = 0; c < spec.d; ++c) {
        const double numeric = oracle::central_difference(&model.M(static_cast<std::size_t>(row), c), 1e-6, loss);
        worst = std::max(worst, oracle::relative_error(g[c], numeric, 1e-5));
        ++checked;
      }
    }
  }
  return {checked >= 64 && worst < 1e-4, std::to_string(checked) + " entries" + fmt(", max rel err %.3g", worst)};
}

Outcome ranking_and_metrics() {
  Rng rng(7);
  std::size_t mismatches = 0;
  std::vector<std::size_t> ranks;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(101);
    const bool coarse = trial % 3 == 0;  // many ties
    for (double& v : s) v = coarse ? static_cast<double>(rng.below(5)) : rng.uniform(-3.0, 3.0);
    const std::size_t target = rng.below(s.size());
    // rank = 1 + number of candidates scored strictly above the target
    std::size_t brute = 1;
    for (std::size_t i = 0; i < s.size(); ++i) brute += s[i] > s[target] ? 1 : 0;
    const std::size_t r = rank_of_target(s, target);
    if (r != brute || r != oracle::sorted_rank(s, target)) ++mismatches;
    ranks.push_back(r);
  }
  double worst = 0.0;
  for (std::size_t k : {1, 5, 10, 20}) {
    double hr = 0.0, ndcg = 0.0;
    for (std::size_t r : ranks) {
      if (r <= k) {
        hr += 1.0;
        ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    hr /= static_cast<double>(ranks.size());
    ndcg /= static_cast<double>(ranks.size());
    const auto rep = compute_metrics(ranks, k);
    worst = std::max({worst, std::abs(rep.hr_at_k - hr), std::abs(rep.ndcg_at_k - ndcg)});
  }
  const std::vector<std::size_t> two{2};
  const double at2 = compute_metrics(two, 10).ndcg_at_k;
  const bool ok = mismatches == 0 && worst < 1e-12 && std::abs(at2 - 0.63093) < 1e-5;
  return {ok, std::to_string(mismatches) + " rank mismatches" + fmt(", metric diff %.3g", worst) +
                  fmt(", NDCG(rank 2) %.5f", at2)};
}

Outcome untrained_null_model() {
  synthetic::Options o;
  o.users = 600;
  o.items = 400;
  o.min_length = 8;
  o.max_length = 16;
  o.seed = 11;
  const LoadedCorpus raw = synthetic::random_corpus(o);
  const InteractionLog log = kcore_filter(raw.log, 5);
  const ItemCatalog catalog = compact_catalog(log, raw.catalog);
  const SplitDataset split = leave_one_out_split(log, catalog);
  MockTextEncoder encoder(32, 0);
  const Matrix M = encode_titles(catalog, encoder, nullptr);
  BackboneShape b;
  b.n = 20;
  b.d = 32;
  AlignmentShape a;
  a.d = 32;
  a.d_k = 32;
  Rng rng(5);
  const LaneModel model = init_model(M, b, a, false, rng);
  EvalOptions opt;
  opt.seed = 99;
  const auto result = evaluate_model(model, split, {}, opt);
  const auto& r10 = result.at(10);
  const bool ok = r10.user_count >= 500 && r10.hr_at_k >= 0.05 && r10.hr_at_k <= 0.15 &&
                  result.per_user.front().candidates == 101;
  return {ok, std::to_string(r10.user_count) + " users" + fmt(", HR@10 %.4f", r10.hr_at_k)};
}

RunConfig synthetic_config(const std::filesystem::path& out, const std::vector<std::string>& extra = {}) {
  std::vector<std::string> overrides{"output_dir=\"" + out.string() + "\""};
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  return load_run_config(std::filesystem::path(LANE_CONFIG_DIR) / "synthetic.json", std::nullopt, overrides);
}

double hr10(const std::filesystem::path& run) {
  const json m = json::parse(oracle::read_file(run / "eval" / "metrics.json"));
  for (const auto& r : m.at("metrics")) {
    if (r.at("k") == 10) return r.at("hr").get<double>();
  }
  throw std::runtime_error("no HR@10 in metrics.json");
}

Outcome synthetic_overfit(const std::filesystem::path& root) {
  const auto t0 = Clock::now();
  std::ostringstream log;
  run_pipeline(synthetic_config(root / "lane"), log);
  run_pipeline(synthetic_config(root / "baseline", {"alignment.enabled=false"}), log);
  const double lane = hr10(root / "lane"), base = hr10(root / "baseline");
  const double secs = seconds_since(t0);
  return {lane >= 0.95 && lane >= base && secs < 600.0,
          fmt("LANE HR@10 %.4f", lane) + fmt(", baseline %.4f", base) + fmt(", %.1f s", secs)};
}

Outcome fixture_split() {
  const json expected = json::parse(oracle::read_file(oracle::fixture("ten_users_5core.expected.json")));
  const LoadedCorpus raw = load_interactions(oracle::fixture("ten_users.tsv"), InputFormat::tsv);
  const InteractionLog log = kcore_filter(raw.log, 5);
  const ItemCatalog catalog = compact_catalog(log, raw.catalog);
  const SplitDataset split = leave_one_out_split(log, catalog);
  auto id = [&](ItemIndex i) { return catalog.at(i).item_id; };
  json got;
  got["events"] = log.size();
  got["items"] = json::array();
  for (const auto& it : catalog.items()) got["items"].push_back(it.item_id);
  got["users"] = json::array();
  for (const auto& u : split.users) {
    json ju = {{"user_id", u.user_id}, {"train", json::array()}};
    for (ItemIndex i : u.train) ju["train"].push_back(id(i));
    ju["valid"] = u.valid ? json(id(*u.valid)) : json(nullptr);
    ju["test"] = u.test ? json(id(*u.test)) : json(nullptr);
    got["users"].push_back(ju);
  }
  const bool ok = got["events"] == expected["events"] && got["items"] == expected["items"] &&
                  got["users"] == expected["users"];
  return {ok, std::to_string(split.users.size()) + " users, " + std::to_string(catalog.size()) + " items"};
}

Outcome invariants(const std::filesystem::path& root) {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* name) {
    if (!ok) failed.push_back(name);
  };
  Rng rng(3);

  {
    const Matrix x = oracle::random_matrix(7, 9, rng, 30.0);
    std::vector<std::uint8_t> mask(7 * 9, 1);
    for (std::size_t i = 0; i < mask.size(); i += 4) mask[i] = 0;
    Matrix out;
    kernels::parallel::softmax_rows(x, mask, out);
    bool ok = true;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        ok = ok && out(r, c) >= 0.0 && (mask[r * 9 + c] != 0 || out(r, c) == 0.0);
        s += out(r, c);
      }
      ok = ok && std::abs(s - 1.0) < 1e-12;
    }
    check(ok, "softmax rows");
  }
  {
    bool ok = true;
    for (int t = 0; t < 50; ++t) {
      AlignmentShape s;
      s.d = 5;
      s.heads = 2;
      s.d_k = 3;
      AlignmentParams p = init_alignment(s, rng);
      perturb(p, rng);
      const Matrix P = oracle::random_matrix(1 + rng.below(6), 5, rng);
      const auto q = oracle::row0(oracle::random_matrix(1, 5, rng, 3.0));
      double sum = 0.0;
      for (double w : preference_attention_weights(q, P, p)) {
        ok = ok && w >= 0.0;
        sum += w;
      }
      ok = ok && std::abs(sum - 1.0) < 1e-12;
    }
    check(ok, "omega sums to one");
  }
  {
    bool ok = true;
    for (int t = 0; t < 200; ++t) {
      std::vector<std::size_t> ranks(1 + rng.below(30));
      for (auto& r : ranks) r = 1 + rng.below(101);
      for (std::size_t k : {1, 5, 10}) {
        const auto rep = compute_metrics(ranks, k);
        ok = ok && rep.ndcg_at_k <= rep.hr_at_k + 1e-15;
      }
    }
    check(ok, "NDCG <= HR");
  }
  for (auto variant : {BackboneVariant::self_attention, BackboneVariant::gated_recurrent}) {
    oracle::TinySpec spec;
    spec.variant = variant;
    spec.n = 6;
    const LaneModel model = oracle::tiny_model(spec);
    const Matrix P = oracle::tiny_preferences(2, spec.d, 9);
    const auto a = build_fixed_sequence({1, 2, 3, 4, 5, 6}, spec.n);
    const auto b = build_fixed_sequence({1, 2, 3, 7, 8, 2}, spec.n);
    const Matrix fa = sequence_features(model, a, &P), fb = sequence_features(model, b, &P);
    bool ok = true;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t c = 0; c < spec.d; ++c) ok = ok && fa(t, c) == fb(t, c);
    }
    check(ok, "causality");
  }
  {
    const std::vector<std::string> texts{"Quiet Harbor", "Night Signal", "Glass Orchard"};
    MockTextEncoder enc(16, 4);
    const Matrix direct = enc.encode(texts);
    {
      EmbeddingCache cache(root / "cache");
      encode_texts(texts, enc, &cache);
      cache.flush();
    }
    EmbeddingCache reloaded(root / "cache");
    bool ok = reloaded.size() == texts.size();
    for (std::size_t i = 0; i < texts.size() && ok; ++i) {
      const auto v = reloaded.lookup(enc.name(), texts[i]);
      ok = v.has_value() && std::equal(v->begin(), v->end(), direct.row(i).begin(), direct.row(i).end());
    }
    check(ok, "encoder cache round trip");
  }
  {
    Checkpoint ck;
    ck.model = oracle::tiny_model({});
    ck.epoch = 3;
    ck.best_valid_ndcg10 = 0.25;
    save_checkpoint(root / "ckpt", ck);
    const Checkpoint back = load_checkpoint(root / "ckpt");
    bool ok = back.epoch == 3 && back.best_valid_ndcg10 == 0.25 && back.model.use_alignment;
    const auto x = std::as_const(ck.model).tensors();
    const auto y = back.model.tensors();
    ok = ok && x.size() == y.size();
    for (std::size_t i = 0; ok && i < x.size(); ++i) ok = x[i].first == y[i].first && *x[i].second == *y[i].second;
    check(ok, "checkpoint round trip");
  }
  {
    synthetic::Options o;
    o.users = 300;
    o.items = 200;
    o.min_length = 3;
    o.max_length = 12;
    o.seed = 2;
    const LoadedCorpus raw = synthetic::random_corpus(o);
    bool ok = true;
    for (std::size_t k : {2, 5, 8}) {
      const InteractionLog once = kcore_filter(raw.log, k);
      const InteractionLog twice = kcore_filter(once, k);
      ok = ok && once.size() == twice.size();
      for (std::size_t i = 0; ok && i < once.size(); ++i) {
        ok = once.events[i].user_id == twice.events[i].user_id && once.events[i].item_id == twice.events[i].item_id;
      }
    }
    check(ok, "k-core idempotence");
  }
  std::string detail = failed.empty() ? "7 invariants hold" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  return {failed.empty(), detail};
}

Outcome mock_explanations(const std::filesystem::path& root) {
  const RunConfig c = synthetic_config(root / "lane", {"explainer.users=20"});
  std::ostringstream log;
  run_command(Command::explain, c, log);
  std::ifstream in(root / "lane" / "explanations" / "explanations.jsonl");
  std::size_t records = 0, good = 0;
  double worst = 0.0;
  const std::set<std::string> labels{"Low", "Medium", "High"};
  for (std::string line; std::getline(in, line);) {
    ++records;
    const json j = json::parse(line);
    if (!j.at("available").get<bool>()) continue;
    const auto omega = j.at("omega").get<std::vector<double>>();
    const auto echoed = j.at("echoed_weights").get<std::vector<double>>();
    const json& steps = j.at("steps");
    bool ok = omega.size() == c.m && echoed.size() == c.m && steps.at("step1").size() == c.m &&
              steps.at("step2").at("fitness").size() == c.m &&
              labels.count(steps.at("step3").at("probability").get<std::string>()) == 1 &&
              !steps.at("step4").at("recommendation").get<std::string>().empty();
    for (std::size_t i = 0; ok && i < c.m; ++i) {
      worst = std::max(worst, std::abs(omega[i] - echoed[i]));
      const double f = steps.at("step2").at("fitness")[i].at("fitness").get<double>();
      ok = f >= 0.0 && f <= 1.0;
    }
    good += ok ? 1 : 0;
  }
  return {records == 20 && good == 20 && worst <= 1e-4,
          std::to_string(good) + "/" + std::to_string(records) + " complete" + fmt(", max echo diff %.2g", worst)};
}

Outcome determinism(const std::filesystem::path& root) {
  std::ostringstream log;
  for (const char* run : {"det_a", "det_b"}) {
    run_pipeline(synthetic_config(root / run, {"trainer.max_epochs=5"}), log);
  }
  const std::string a = oracle::read_file(root / "det_a" / "eval" / "metrics.json");
  const std::string b = oracle::read_file(root / "det_b" / "eval" / "metrics.json");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "differ")};
}

}  // namespace

int main() {
  oracle::TempDir root("acceptance");
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"alignment forward and omega vs reference", alignment_vs_oracle},
      {"end-to-end finite-difference gradients", end_to_end_gradients},
      {"ranking and HR/NDCG vs brute force", ranking_and_metrics},
      {"untrained model HR@10 near chance", untrained_null_model},
      {"synthetic overfit, LANE vs baseline", [&] { return synthetic_overfit(root.path()); }},
      {"10-user fixture split", fixture_split},
      {"invariant suite", [&] { return invariants(root.path()); }},
      {"mock explanations", [&] { return mock_explanations(root.path()); }},
      {"byte-identical reruns", [&] { return determinism(root.path()); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
