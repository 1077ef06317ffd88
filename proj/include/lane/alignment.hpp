#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lane/autograd.hpp"
#include "lane/matrix.hpp"
#include "lane/random.hpp"

namespace lane {

struct AlignmentShape {
  std::size_t d = 384;
  std::size_t heads = 4;
  std::size_t d_k = 384;
  double dropout = 0.5;
  double ln_eps = 1e-8;
};

/// Cross-attention from sequence features to preference embeddings.
struct AlignmentParams {
  AlignmentShape shape;
  std::vector<Matrix> wq, wk, wv;  // per head, d x d_k
  Matrix wo;                       // (heads * d_k) x d
  Matrix w1, w2;                   // d x d
  Matrix b1, b2;                   // 1 x d
  Matrix ln1_scale, ln1_bias;      // 1 x d
  Matrix ln2_scale, ln2_bias;      // 1 x d

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  AlignmentParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Xavier-uniform projections and FFN weights, zero biases, LayerNorm scale 1 / bias 0.
AlignmentParams init_alignment(const AlignmentShape& shape, Rng& rng);

struct AlignedFeatures {
  Matrix F;    // n x d
  Matrix att;  // n x d
};

/// softmax(Q K^T / sqrt(d_k)) V with d_k = Q.cols().
Matrix scaled_dot_product_attention(const Matrix& Q, const Matrix& K, const Matrix& V);

/// Concat(head_1..head_h) W^o, head_i = Attention(Q W_i^Q, K W_i^K, V W_i^V).
Matrix multi_head_attention(const Matrix& Q, const Matrix& K, const Matrix& V,
                            const AlignmentParams& params);

/// ReLU(x W_1 + b_1) W_2 + b_2, row-wise.
Matrix position_wise_ffn(const Matrix& x, const AlignmentParams& params);

/// alpha * (x - mean) / sqrt(var + eps) + beta over one feature vector (population variance).
std::vector<double> layer_normalize(std::span<const double> x, std::span<const double> alpha,
                                    std::span<const double> beta, double eps);

/// att = LN1(Multihead(Q, P, P)) + Q;  F = LN2(FFN(att)) + att.
AlignedFeatures align(const Matrix& Q, const Matrix& P, const AlignmentParams& params);

/// omega = softmax(Concat_i(q W_i^Q) Concat_i(P W_i^K)^T / sqrt(heads * d_k)), one weight per
/// preference row of P.
std::vector<double> preference_attention_weights(std::span<const double> q, const Matrix& P,
                                                 const AlignmentParams& params);

namespace ag {

struct AlignedVars {
  Var F;
  Var att;
};

Var multi_head_attention(Tape& tape, Var Q, Var K, Var V, const AlignmentParams& params,
                         AlignmentParams* grads, Rng* dropout_rng);
Var position_wise_ffn(Tape& tape, Var x, const AlignmentParams& params, AlignmentParams* grads,
                      Rng* dropout_rng);
/// A null rng disables dropout.
AlignedVars align(Tape& tape, Var Q, Var P, const AlignmentParams& params, AlignmentParams* grads,
                  Rng* dropout_rng);

}  // namespace ag

}  // namespace lane
