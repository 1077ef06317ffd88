#include "lane/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "lane/error.hpp"

namespace lane {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("trainer.learning_rate must be a finite non-negative number");
  }
  if (batch_size == 0) throw ConfigError("trainer.batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("trainer.max_epochs must be positive");
  if (patience == 0) throw ConfigError("trainer.patience must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("trainer.dropout must lie in [0, 1)");
  if (gradient_groups == 0) throw ConfigError("trainer.gradient_groups must be positive");
  if (!(adam_eps > 0.0)) throw ConfigError("trainer.adam_eps must be positive");
}

ItemIndex sample_negative(std::size_t item_count, std::span<const ItemIndex> user_items, Rng& rng) {
  std::size_t owned = 0;
  for (std::size_t i = 0; i < user_items.size(); ++i) {
    const ItemIndex it = user_items[i];
    if (it >= 1 && static_cast<std::size_t>(it) <= item_count && (i == 0 || user_items[i - 1] != it)) {
      ++owned;
    }
  }
  const std::size_t eligible = item_count - owned;
  if (eligible == 0) {
    throw SamplingError("no item left to sample as a negative (" + std::to_string(item_count) +
                        " items, all interacted)");
  }
  auto is_owned = [&](ItemIndex i) {
    return std::binary_search(user_items.begin(), user_items.end(), i);
  };
  if (eligible * 4 >= item_count) {
    for (;;) {
      const auto i = static_cast<ItemIndex>(1 + rng.below(item_count));
      if (!is_owned(i)) return i;
    }
  }
  std::size_t skip = rng.below(eligible);
  for (std::size_t i = 1; i <= item_count; ++i) {
    if (is_owned(static_cast<ItemIndex>(i))) continue;
    if (skip-- == 0) return static_cast<ItemIndex>(i);
  }
  throw SamplingError("sample_negative: pool exhausted");
}

double sequence_bce_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                         std::span<const std::uint8_t> valid_mask) {
  if (pos_scores.size() != neg_scores.size() || pos_scores.size() != valid_mask.size()) {
    throw std::invalid_argument("sequence_bce_loss: length mismatch");
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < pos_scores.size(); ++t) {
    if (valid_mask[t] == 0) continue;
    loss += ag::softplus(-pos_scores[t]) + ag::softplus(neg_scores[t]);
  }
  return loss;
}

std::optional<TrainingExample> make_training_example(const std::vector<ItemIndex>& train,
                                                     std::size_t n, std::size_t item_count, Rng& rng) {
  if (train.size() < 2) return std::nullopt;
  TrainingExample ex;
  ex.input = build_fixed_sequence({train.begin(), train.end() - 1}, n);
  ex.positives = build_fixed_sequence({train.begin() + 1, train.end()}, n).indices;
  std::vector<ItemIndex> owned = train;
  std::sort(owned.begin(), owned.end());
  ex.negatives.assign(n, kPadIndex);
  for (std::size_t t = 0; t < n; ++t) {
    if (ex.input.valid_mask[t] != 0) ex.negatives[t] = sample_negative(item_count, owned, rng);
  }
  return ex;
}

ag::Var example_loss(ag::Tape& tape, const LaneModel& model, const TrainingExample& example,
                     const Matrix* P, const ag::ModelGrads& grads, Rng* dropout_rng) {
  const ag::Var F = ag::sequence_features(tape, model, example.input, P, grads, dropout_rng);
  const ag::Var pos = tape.gather_rows(model.M, example.positives, grads.embedding);
  const ag::Var neg = tape.gather_rows(model.M, example.negatives, grads.embedding);
  return ag::masked_bce(ag::rows_dot(F, pos), ag::rows_dot(F, neg), example.input.valid_mask);
}

// ---------------------------------------------------------------------------

ModelGradients::ModelGradients(const LaneModel& model)
    : backbone(model.backbone.zeros_like()),
      alignment(model.use_alignment ? model.alignment.zeros_like() : AlignmentParams{}),
      embedding(model.dim()) {}

void ModelGradients::clear() {
  for (auto& [name, m] : backbone.tensors()) m->fill(0.0);
  for (auto& [name, m] : alignment.tensors()) m->fill(0.0);
  embedding.clear();
}

void ModelGradients::merge(const ModelGradients& other) {
  auto mine = backbone.tensors();
  auto theirs = other.backbone.tensors();
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].second += *theirs[i].second;
  auto mine_a = alignment.tensors();
  auto theirs_a = other.alignment.tensors();
  for (std::size_t i = 0; i < mine_a.size(); ++i) {
    if (!mine_a[i].second->empty()) *mine_a[i].second += *theirs_a[i].second;
  }
  embedding.merge(other.embedding);
}

ag::ModelGrads ModelGradients::sinks(bool train_embedding) {
  return {&backbone, alignment.wq.empty() ? nullptr : &alignment,
          train_embedding ? &embedding : nullptr};
}

void Adam::update(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, std::size_t first_row) {
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const std::size_t begin = first_row * p.cols();
  double* pv = p.data();
  const double* gv = g.data();
  double* mv = m.data();
  double* vv = v.data();
  for (std::size_t i = begin; i < p.size(); ++i) {
    mv[i] = b1_ * mv[i] + (1.0 - b1_) * gv[i];
    vv[i] = b2_ * vv[i] + (1.0 - b2_) * gv[i] * gv[i];
    pv[i] -= lr_ * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps_);
  }
}

void Adam::step(LaneModel& model, const ModelGradients& grads, bool train_embedding) {
  auto params = model.tensors();
  std::vector<const Matrix*> g;
  g.reserve(params.size());
  Matrix dense_embedding;
  if (train_embedding) {
    dense_embedding = Matrix::zeros_like(model.M);
    for (const auto& [r, values] : grads.embedding.rows()) {
      dense_embedding.set_row(static_cast<std::size_t>(r), values);
    }
  }
  g.push_back(&dense_embedding);
  for (const auto& [name, m] : grads.backbone.tensors()) g.push_back(m);
  if (model.use_alignment) {
    for (const auto& [name, m] : grads.alignment.tensors()) g.push_back(m);
  }
  if (g.size() != params.size()) throw std::logic_error("Adam: gradient layout mismatch");
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.push_back(Matrix::zeros_like(*p));
      v_.push_back(Matrix::zeros_like(*p));
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i == 0) {
      if (train_embedding) update(*params[0].second, *g[0], m_[0], v_[0], 1);
      continue;
    }
    update(*params[i].second, *g[i], m_[i], v_[i]);
  }
}

// ---------------------------------------------------------------------------

std::string epoch_log_json(const EpochLog& e) {
  return json{{"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"valid_ndcg10", e.valid_ndcg10},
              {"valid_hr10", e.valid_hr10}}
      .dump();
}

TrainResult train_model(const SplitDataset& data, const LaneModel& initial,
                        const PreferenceEmbeddings& preferences, const TrainConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  LaneModel model = initial;
  model.backbone.shape.dropout = config.dropout;
  model.alignment.shape.dropout = config.alignment_dropout ? config.dropout : 0.0;
  const bool train_embedding = !config.freeze_M;

  struct Learner {
    const UserSplit* user;
    const Matrix* P;
  };
  std::vector<Learner> learners;
  for (const auto& u : data.users) {
    if (u.train.size() < 2) continue;
    const Matrix* P = nullptr;
    if (model.use_alignment) {
      auto it = preferences.find(u.user_id);
      if (it == preferences.end()) continue;
      P = &it->second;
    }
    learners.push_back({&u, P});
  }
  if (learners.empty()) throw UserError("no user has a training sequence of at least two items");

  EvalOptions validation = config.validation;
  validation.split = EvalSplit::valid;
  if (std::find(validation.ks.begin(), validation.ks.end(), 10) == validation.ks.end()) {
    validation.ks.push_back(10);
  }

  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
  const std::size_t groups_max = config.gradient_groups;
  std::vector<ModelGradients> group_grads(groups_max, ModelGradients(model));
  std::vector<double> group_loss(groups_max);
  std::vector<std::string> group_error(groups_max);

  TrainResult result;
  result.best.model = model;
  result.best.train = config;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(learners.size());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(config.seed, fnv1a64("shuffle"), epoch));
    shuffler.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t count = end - start;
      const std::size_t groups = std::min(groups_max, count);
      for (std::size_t g = 0; g < groups; ++g) {
        group_grads[g].clear();
        group_loss[g] = 0.0;
        group_error[g].clear();
      }
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(groups); ++gi) {
        const auto g = static_cast<std::size_t>(gi);
        const std::size_t lo = start + count * g / groups;
        const std::size_t hi = start + count * (g + 1) / groups;
        try {
          const ag::ModelGrads sinks = group_grads[g].sinks(train_embedding);
          for (std::size_t k = lo; k < hi; ++k) {
            const Learner& l = learners[order[k]];
            Rng rng(derive_seed(config.seed, epoch, fnv1a64(l.user->user_id)));
            const auto ex = make_training_example(l.user->train, model.sequence_length(),
                                                  model.item_count(), rng);
            ag::Tape tape;
            const ag::Var loss =
                example_loss(tape, model, *ex, l.P, sinks, config.dropout > 0.0 ? &rng : nullptr);
            tape.backward(loss);
            group_loss[g] += loss.value()(0, 0);
          }
        } catch (const std::exception& e) {
          group_error[g] = e.what();
        }
      }
      for (std::size_t g = 0; g < groups; ++g) {
        if (!group_error[g].empty()) {
          throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) +
                             ": " + group_error[g]);
        }
      }
      double batch_loss = 0.0;
      for (std::size_t g = 0; g < groups; ++g) batch_loss += group_loss[g];
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no));
      }
      for (std::size_t g = 1; g < groups; ++g) group_grads[0].merge(group_grads[g]);
      adam.step(model, group_grads[0], train_embedding);
      epoch_loss += batch_loss;
    }
    if (!model.backbone.all_finite() || (model.use_alignment && !model.alignment.all_finite()) ||
        !model.M.all_finite()) {
      throw NumericError("training diverged: non-finite parameters after epoch " + std::to_string(epoch));
    }

    const EvaluationResult valid = evaluate_model(model, data, preferences, validation);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = order.empty() ? 0.0 : epoch_loss / static_cast<double>(order.size());
    log.valid_ndcg10 = valid.at(10).ndcg_at_k;
    log.valid_hr10 = valid.at(10).hr_at_k;
    result.best.history.push_back(log);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(log);

    if (log.valid_ndcg10 > best) {
      best = log.valid_ndcg10;
      since_best = 0;
      result.best.model = model;
      result.best.epoch = epoch;
      result.best.best_valid_ndcg10 = best;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'L', 'A', 'N', 'E', 'C', 'K', 'P', '1'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& file) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IntegrityError("truncated checkpoint file " + file);
  return v;
}

json shape_json(const BackboneShape& s) {
  return {{"variant", to_string(s.variant)}, {"n", s.n},           {"d", s.d},
          {"blocks", s.blocks},             {"heads", s.heads},   {"dropout", s.dropout},
          {"ln_eps", s.ln_eps}};
}

json shape_json(const AlignmentShape& s) {
  return {{"d", s.d}, {"heads", s.heads}, {"d_k", s.d_k}, {"dropout", s.dropout}, {"ln_eps", s.ln_eps}};
}

json train_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},
          {"seed", c.seed},                   {"dropout", c.dropout},
          {"freeze_M", c.freeze_M},           {"alignment_dropout", c.alignment_dropout},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"adam_eps", c.adam_eps},
          {"gradient_groups", c.gradient_groups}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  const auto bin_path = dir / "params.bin";
  {
    std::ofstream out(bin_path.string() + ".tmp", std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write " + bin_path.string());
    out.write(kMagic, sizeof kMagic);
    const auto tensors = ckpt.model.tensors();
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, m] : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint64_t>(out, m->rows());
      put<std::uint64_t>(out, m->cols());
      out.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(m->size() * sizeof(double)));
    }
    if (!out) throw UserError("failed writing " + bin_path.string());
  }
  std::filesystem::rename(bin_path.string() + ".tmp", bin_path);

  json manifest;
  manifest["format"] = 1;
  manifest["params_file"] = "params.bin";
  manifest["epoch"] = ckpt.epoch;
  manifest["best_valid_ndcg10"] = ckpt.best_valid_ndcg10;
  manifest["use_alignment"] = ckpt.model.use_alignment;
  manifest["item_count"] = ckpt.model.item_count();
  manifest["backbone"] = shape_json(ckpt.model.backbone.shape);
  manifest["alignment"] = shape_json(ckpt.model.alignment.shape);
  manifest["train"] = train_json(ckpt.train);
  json history = json::array();
  for (const auto& e : ckpt.history) history.push_back(json::parse(epoch_log_json(e)));
  manifest["history"] = std::move(history);
  manifest["config"] = json::parse(ckpt.config_json);
  std::ofstream out(dir / "checkpoint.json", std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + (dir / "checkpoint.json").string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "checkpoint.json";
  const auto bin_path = dir / "params.bin";
  if (!std::filesystem::exists(manifest_path) || !std::filesystem::exists(bin_path)) {
    throw MissingArtifact("no checkpoint in " + dir.string(), "train");
  }
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }

  std::map<std::string, Matrix> stored;
  {
    std::ifstream in(bin_path, std::ios::binary);
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
      throw IntegrityError(bin_path.string() + " is not a checkpoint file");
    }
    const auto count = get<std::uint64_t>(in, bin_path.string());
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = get<std::uint32_t>(in, bin_path.string());
      std::string name(len, '\0');
      in.read(name.data(), len);
      const auto rows = get<std::uint64_t>(in, bin_path.string());
      const auto cols = get<std::uint64_t>(in, bin_path.string());
      Matrix m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw IntegrityError("truncated checkpoint file " + bin_path.string());
      stored.emplace(std::move(name), std::move(m));
    }
  }

  Checkpoint ckpt;
  try {
    const auto& b = manifest.at("backbone");
    BackboneShape bs;
    bs.variant = parse_backbone_variant(b.at("variant").get<std::string>());
    bs.n = b.at("n");
    bs.d = b.at("d");
    bs.blocks = b.at("blocks");
    bs.heads = b.at("heads");
    bs.dropout = b.at("dropout");
    bs.ln_eps = b.at("ln_eps");
    const auto& a = manifest.at("alignment");
    AlignmentShape as;
    as.d = a.at("d");
    as.heads = a.at("heads");
    as.d_k = a.at("d_k");
    as.dropout = a.at("dropout");
    as.ln_eps = a.at("ln_eps");
    const bool use_alignment = manifest.at("use_alignment");
    const std::size_t item_count = manifest.at("item_count");

    Matrix placeholder(item_count + 1, bs.d);
    Rng rng(0);
    ckpt.model = init_model(placeholder, bs, as, use_alignment, rng);
    for (auto& [name, m] : ckpt.model.tensors()) {
      auto it = stored.find(name);
      if (it == stored.end()) throw IntegrityError("checkpoint lacks tensor '" + name + "'");
      if (!it->second.same_shape(*m)) {
        throw IntegrityError("checkpoint tensor '" + name + "' is " + it->second.shape_string() +
                             ", expected " + m->shape_string());
      }
      *m = std::move(it->second);
    }

    ckpt.epoch = manifest.at("epoch");
    ckpt.best_valid_ndcg10 = manifest.at("best_valid_ndcg10");
    const auto& t = manifest.at("train");
    ckpt.train.learning_rate = t.at("learning_rate");
    ckpt.train.batch_size = t.at("batch_size");
    ckpt.train.max_epochs = t.at("max_epochs");
    ckpt.train.patience = t.at("patience");
    ckpt.train.seed = t.at("seed");
    ckpt.train.dropout = t.at("dropout");
    ckpt.train.freeze_M = t.at("freeze_M");
    ckpt.train.alignment_dropout = t.at("alignment_dropout");
    ckpt.train.adam_beta1 = t.at("adam_beta1");
    ckpt.train.adam_beta2 = t.at("adam_beta2");
    ckpt.train.adam_eps = t.at("adam_eps");
    ckpt.train.gradient_groups = t.at("gradient_groups");
    for (const auto& e : manifest.at("history")) {
      ckpt.history.push_back({e.at("epoch"), e.at("train_loss"), e.at("valid_ndcg10"), e.at("valid_hr10")});
    }
    ckpt.config_json = manifest.at("config").dump();
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace lane
