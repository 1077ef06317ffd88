#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lane/autograd.hpp"
#include "lane/corpus.hpp"
#include "lane/matrix.hpp"
#include "lane/random.hpp"

namespace lane {

enum class BackboneVariant { self_attention, gated_recurrent };
std::string to_string(BackboneVariant v);
BackboneVariant parse_backbone_variant(const std::string& name);

struct BackboneShape {
  BackboneVariant variant = BackboneVariant::self_attention;
  std::size_t n = 50;       ///< sequence length
  std::size_t d = 384;      ///< feature width (= title embedding width)
  std::size_t blocks = 2;   ///< transformer blocks or stacked GRU layers
  std::size_t heads = 1;    ///< self-attention heads; must divide d
  double dropout = 0.5;
  double ln_eps = 1e-8;
};

/// Pre-norm transformer block: LN -> causal MHA -> residual -> LN -> FFN -> residual.
struct AttentionBlock {
  Matrix ln1_scale, ln1_bias;
  Matrix wq, wk, wv, wo;  // d x d
  Matrix bq, bk, bv, bo;  // 1 x d
  Matrix ln2_scale, ln2_bias;
  Matrix w1, w2;  // d x d
  Matrix b1, b2;  // 1 x d
};

/// PyTorch GRU layout: gate column blocks ordered (reset, update, new).
struct RecurrentLayer {
  Matrix w_input;   // d x 3d
  Matrix w_hidden;  // d x 3d
  Matrix b_input;   // 1 x 3d
  Matrix b_hidden;  // 1 x 3d
};

struct BackboneParams {
  BackboneShape shape;
  Matrix positional;  // n x d
  std::vector<AttentionBlock> attention;
  std::vector<RecurrentLayer> recurrent;
  Matrix final_scale, final_bias;  // 1 x d, self-attention only

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;

  /// Same shapes, all zeros (gradient / optimizer state holder).
  BackboneParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// rows x cols, uniform in +-sqrt(6 / (rows + cols)).
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

/// Xavier-uniform weights, zero biases, unit LayerNorm scales; the
/// positional table is uniform in [-pe_scale, pe_scale].
BackboneParams init_backbone(const BackboneShape& shape, Rng& rng, double pe_scale = 0.02);

/// E_t = M[index_t] + PE_t. Pads look up the zero row, so they receive PE_t only.
Matrix embed_with_positions(const PaddedSequence& seq, const Matrix& M, const BackboneParams& params);

struct SequenceFeatures {
  Matrix Q;  // n x d
  std::vector<std::uint8_t> valid_mask;
};

/// Forward pass without dropout.
SequenceFeatures encode_sequence(const Matrix& E, const std::vector<std::uint8_t>& valid_mask,
                                 const BackboneParams& params);

namespace ag {

/// Gradient sinks for one tape; null members make the matching leaves constants.
struct BackboneGrads {
  BackboneParams* params = nullptr;
  RowGrad* embedding = nullptr;
};

Var embed_with_positions(Tape& tape, const PaddedSequence& seq, const Matrix& M,
                         const BackboneParams& params, const BackboneGrads& grads);

/// Causal encoder. Keys at pad positions are masked; a null rng disables dropout.
Var encode_sequence(Tape& tape, Var E, const std::vector<std::uint8_t>& valid_mask,
                    const BackboneParams& params, BackboneParams* grads, Rng* dropout_rng);

}  // namespace ag

}  // namespace lane
