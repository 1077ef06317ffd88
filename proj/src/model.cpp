#include "lane/model.hpp"

#include "lane/error.hpp"

namespace lane {

namespace {

template <class Model, class Out>
void collect(Model& model, Out& out) {
  out.emplace_back("M", &model.M);
  for (auto& [name, m] : model.backbone.tensors()) out.emplace_back("backbone." + name, m);
  if (model.use_alignment) {
    for (auto& [name, m] : model.alignment.tensors()) out.emplace_back("alignment." + name, m);
  }
}

void require_preferences(const LaneModel& model, const Matrix* P) {
  if (!model.use_alignment) return;
  if (P == nullptr) throw ConfigError("alignment enabled but no preference embeddings given");
  if (P->cols() != model.dim()) {
    throw ConfigError("preference embeddings are " + P->shape_string() + ", expected width " +
                      std::to_string(model.dim()));
  }
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> LaneModel::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> LaneModel::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  collect(*this, out);
  return out;
}

LaneModel init_model(const Matrix& M, const BackboneShape& backbone, const AlignmentShape& alignment,
                     bool use_alignment, Rng& rng) {
  if (M.rows() < 2) throw ConfigError("embedding matrix needs at least one item row");
  if (M.cols() != backbone.d) {
    throw ConfigError("embedding width " + std::to_string(M.cols()) + " differs from backbone d=" +
                      std::to_string(backbone.d));
  }
  if (use_alignment && alignment.d != backbone.d) {
    throw ConfigError("alignment d must equal backbone d");
  }
  for (double v : M.row(0)) {
    if (v != 0.0) throw ConfigError("embedding matrix row 0 must be zero");
  }
  LaneModel model;
  model.M = M;
  model.backbone = init_backbone(backbone, rng);
  model.use_alignment = use_alignment;
  if (use_alignment) model.alignment = init_alignment(alignment, rng);
  else model.alignment.shape = alignment;
  return model;
}

double score_candidate(std::span<const double> f, std::span<const double> m_i) {
  if (f.size() != m_i.size()) throw ConfigError("score_candidate: dimension mismatch");
  return dot(f, m_i);
}

namespace ag {

Var sequence_features(Tape& tape, const LaneModel& model, const PaddedSequence& seq, const Matrix* P,
                      const ModelGrads& grads, Rng* dropout_rng) {
  require_preferences(model, P);
  const Var E = embed_with_positions(tape, seq, model.M, model.backbone, {grads.backbone, grads.embedding});
  const Var Q = encode_sequence(tape, E, seq.valid_mask, model.backbone, grads.backbone, dropout_rng);
  if (!model.use_alignment) return Q;
  return align(tape, Q, tape.constant(*P), model.alignment, grads.alignment, dropout_rng).F;
}

}  // namespace ag

Matrix sequence_features(const LaneModel& model, const PaddedSequence& seq, const Matrix* P) {
  ag::Tape tape(false);
  return ag::sequence_features(tape, model, seq, P, {}, nullptr).value();
}

std::vector<double> last_features(const LaneModel& model, const std::vector<ItemIndex>& history,
                                  const Matrix* P) {
  const Matrix F = sequence_features(model, build_fixed_sequence(history, model.sequence_length()), P);
  const auto last = F.row(F.rows() - 1);
  return {last.begin(), last.end()};
}

std::vector<double> last_backbone_features(const LaneModel& model,
                                           const std::vector<ItemIndex>& history) {
  const PaddedSequence seq = build_fixed_sequence(history, model.sequence_length());
  ag::Tape tape(false);
  const ag::Var E = ag::embed_with_positions(tape, seq, model.M, model.backbone, {});
  const Matrix Q = ag::encode_sequence(tape, E, seq.valid_mask, model.backbone, nullptr, nullptr).value();
  const auto last = Q.row(Q.rows() - 1);
  return {last.begin(), last.end()};
}

}  // namespace lane
