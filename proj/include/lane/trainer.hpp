#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lane/corpus.hpp"
#include "lane/evaluator.hpp"
#include "lane/model.hpp"
#include "lane/random.hpp"

namespace lane {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double dropout = 0.5;
  bool alignment_dropout = true;  ///< apply `dropout` inside the alignment block too
  bool freeze_M = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Users of a batch are split into this many contiguous groups, each with its
  /// own gradient accumulator, reduced in group order. Fixing the count keeps
  /// results independent of the thread count.
  std::size_t gradient_groups = 4;
  EvalOptions validation;  ///< split is forced to valid; early stopping reads NDCG@10

  void validate() const;
};

/// Uniform over {1..item_count} minus user_items. Throws SamplingError when empty.
/// `user_items` must be sorted.
ItemIndex sample_negative(std::size_t item_count, std::span<const ItemIndex> user_items, Rng& rng);

/// -sum over valid t of [log sigma(pos_t) + log(1 - sigma(neg_t))], computed with softplus.
double sequence_bce_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                         std::span<const std::uint8_t> valid_mask);

/// One user's training example: inputs are the prefix without its last item,
/// positives the same prefix shifted by one.
struct TrainingExample {
  PaddedSequence input;
  std::vector<ItemIndex> positives;  ///< length n, 0 at pad positions
  std::vector<ItemIndex> negatives;  ///< length n, 0 at pad positions
};

/// Null when the training prefix has fewer than two items.
std::optional<TrainingExample> make_training_example(const std::vector<ItemIndex>& train,
                                                     std::size_t n, std::size_t item_count, Rng& rng);

/// Records forward + loss for one example on `tape` and returns the 1 x 1 loss.
ag::Var example_loss(ag::Tape& tape, const LaneModel& model, const TrainingExample& example,
                     const Matrix* P, const ag::ModelGrads& grads, Rng* dropout_rng);

/// Gradient holder mirroring the trainable tensors of a model.
struct ModelGradients {
  BackboneParams backbone;
  AlignmentParams alignment;
  ag::RowGrad embedding;

  explicit ModelGradients(const LaneModel& model);
  void clear();
  void merge(const ModelGradients& other);
  ag::ModelGrads sinks(bool train_embedding);
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  /// One step over every tensor. Row 0 of M is left untouched.
  void step(LaneModel& model, const ModelGradients& grads, bool train_embedding);
  std::size_t steps() const { return t_; }

 private:
  void update(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, std::size_t first_row = 0);

  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  ///< mean per-user loss over the epoch
  double valid_ndcg10 = 0.0;
  double valid_hr10 = 0.0;
};

struct Checkpoint {
  LaneModel model;
  std::string config_json = "{}";  ///< run configuration snapshot
  std::size_t epoch = 0;           ///< epoch of the stored parameters (0 = untrained)
  double best_valid_ndcg10 = 0.0;
  std::vector<EpochLog> history;
  TrainConfig train;
};

struct TrainResult {
  Checkpoint best;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
};

/// Adam on all trainable tensors with early stopping on validation NDCG@10.
/// Users absent from `preferences` are excluded when alignment is enabled.
/// `on_epoch` (optional) sees each epoch's log as it is produced.
TrainResult train_model(const SplitDataset& data, const LaneModel& initial,
                        const PreferenceEmbeddings& preferences, const TrainConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

std::string epoch_log_json(const EpochLog& e);

/// Writes `dir`/params.bin and `dir`/checkpoint.json.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace lane
