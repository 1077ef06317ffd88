#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lane/alignment.hpp"
#include "lane/autograd.hpp"
#include "lane/backbone.hpp"
#include "lane/corpus.hpp"
#include "lane/matrix.hpp"

namespace lane {

/// Backbone + optional alignment block over a shared item embedding table.
struct LaneModel {
  Matrix M;  ///< (|I| + 1) x d, row 0 is the pad row and stays zero
  BackboneParams backbone;
  AlignmentParams alignment;
  bool use_alignment = true;

  std::size_t item_count() const { return M.rows() == 0 ? 0 : M.rows() - 1; }
  std::size_t dim() const { return M.cols(); }
  std::size_t sequence_length() const { return backbone.shape.n; }

  /// Named tensors in checkpoint order: "M", "backbone.*", then "alignment.*"
  /// when the alignment block is enabled.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
};

/// The backbone embedding layer starts from the title embedding matrix M.
LaneModel init_model(const Matrix& M, const BackboneShape& backbone, const AlignmentShape& alignment,
                     bool use_alignment, Rng& rng);

/// Preference embedding matrix P^u (m x d) per user id.
using PreferenceEmbeddings = std::unordered_map<std::string, Matrix>;

/// r = f . m_i
double score_candidate(std::span<const double> f, std::span<const double> m_i);

/// Per-position features of the (padded) history: F^u, or Q^u without alignment.
/// Dropout is off. `P` may be null only when alignment is disabled.
Matrix sequence_features(const LaneModel& model, const PaddedSequence& seq, const Matrix* P);

/// Feature vector of the last observed position for a raw history.
std::vector<double> last_features(const LaneModel& model, const std::vector<ItemIndex>& history,
                                  const Matrix* P);

/// Backbone output q at the last real position (the query used for the preference weights).
std::vector<double> last_backbone_features(const LaneModel& model,
                                           const std::vector<ItemIndex>& history);

namespace ag {

struct ModelGrads {
  BackboneParams* backbone = nullptr;
  AlignmentParams* alignment = nullptr;
  RowGrad* embedding = nullptr;  ///< null freezes M
};

/// Recorded forward pass returning the n x d features fed to the scorer.
Var sequence_features(Tape& tape, const LaneModel& model, const PaddedSequence& seq, const Matrix* P,
                      const ModelGrads& grads, Rng* dropout_rng);

}  // namespace ag

}  // namespace lane
