#include "lane/alignment.hpp"

#include <cmath>

#include "lane/backbone.hpp"
#include "lane/error.hpp"
#include "lane/kernels.hpp"

namespace lane {

namespace {

template <class Params, class Out>
void collect(Params& p, Out& out) {
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    const std::string pre = "head" + std::to_string(h) + ".";
    out.emplace_back(pre + "wq", &p.wq[h]);
    out.emplace_back(pre + "wk", &p.wk[h]);
    out.emplace_back(pre + "wv", &p.wv[h]);
  }
  out.emplace_back("wo", &p.wo);
  out.emplace_back("w1", &p.w1);
  out.emplace_back("b1", &p.b1);
  out.emplace_back("w2", &p.w2);
  out.emplace_back("b2", &p.b2);
  out.emplace_back("ln1_scale", &p.ln1_scale);
  out.emplace_back("ln1_bias", &p.ln1_bias);
  out.emplace_back("ln2_scale", &p.ln2_scale);
  out.emplace_back("ln2_bias", &p.ln2_bias);
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> AlignmentParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> AlignmentParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  collect(*this, out);
  return out;
}

AlignmentParams AlignmentParams::zeros_like() const {
  AlignmentParams z = *this;
  for (auto& [name, m] : z.tensors()) m->fill(0.0);
  return z;
}

std::size_t AlignmentParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, m] : tensors()) total += m->size();
  return total;
}

bool AlignmentParams::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->all_finite()) return false;
  }
  return true;
}

AlignmentParams init_alignment(const AlignmentShape& shape, Rng& rng) {
  if (shape.d == 0 || shape.heads == 0 || shape.d_k == 0) {
    throw ConfigError("alignment: d, h and d_k must be positive");
  }
  if (!(shape.ln_eps > 0.0)) throw ConfigError("alignment: layer norm epsilon must be positive");
  if (shape.dropout < 0.0 || shape.dropout >= 1.0) {
    throw ConfigError("alignment.dropout must lie in [0, 1)");
  }
  AlignmentParams p;
  p.shape = shape;
  for (std::size_t h = 0; h < shape.heads; ++h) {
    p.wq.push_back(xavier_uniform(shape.d, shape.d_k, rng));
    p.wk.push_back(xavier_uniform(shape.d, shape.d_k, rng));
    p.wv.push_back(xavier_uniform(shape.d, shape.d_k, rng));
  }
  p.wo = xavier_uniform(shape.heads * shape.d_k, shape.d, rng);
  p.w1 = xavier_uniform(shape.d, shape.d, rng);
  p.w2 = xavier_uniform(shape.d, shape.d, rng);
  p.b1 = Matrix(1, shape.d);
  p.b2 = Matrix(1, shape.d);
  p.ln1_scale = Matrix(1, shape.d, 1.0);
  p.ln1_bias = Matrix(1, shape.d);
  p.ln2_scale = Matrix(1, shape.d, 1.0);
  p.ln2_bias = Matrix(1, shape.d);
  return p;
}

// ---------------------------------------------------------------------------

namespace ag {

namespace {

void check_shapes(Var Q, Var K, Var V, const AlignmentParams& params) {
  const std::size_t d = params.shape.d;
  if (Q.cols() != d || K.cols() != d || V.cols() != d) {
    throw ConfigError("multi_head_attention: inputs " + Q.value().shape_string() + ", " +
                      K.value().shape_string() + ", " + V.value().shape_string() +
                      " do not match d=" + std::to_string(d));
  }
  if (K.rows() != V.rows()) throw ConfigError("multi_head_attention: K and V row counts differ");
  if (params.wq.size() != params.shape.heads) {
    throw ConfigError("multi_head_attention: parameter head count mismatch");
  }
}

}  // namespace

Var multi_head_attention(Tape& tape, Var Q, Var K, Var V, const AlignmentParams& params,
                         AlignmentParams* grads, Rng* dropout_rng) {
  check_shapes(Q, K, V, params);
  const double rate = dropout_rng != nullptr ? params.shape.dropout : 0.0;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.shape.d_k));
  std::vector<Var> heads;
  heads.reserve(params.shape.heads);
  for (std::size_t h = 0; h < params.shape.heads; ++h) {
    const Var wq = tape.parameter(params.wq[h], grads != nullptr ? &grads->wq[h] : nullptr);
    const Var wk = tape.parameter(params.wk[h], grads != nullptr ? &grads->wk[h] : nullptr);
    const Var wv = tape.parameter(params.wv[h], grads != nullptr ? &grads->wv[h] : nullptr);
    const Var qh = matmul(Q, wq);
    const Var kh = matmul(K, wk);
    const Var vh = matmul(V, wv);
    Var w = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dk));
    w = dropout(w, rate, dropout_rng);
    heads.push_back(matmul(w, vh));
  }
  const Var concat = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return matmul(concat, tape.parameter(params.wo, grads != nullptr ? &grads->wo : nullptr));
}

Var position_wise_ffn(Tape& tape, Var x, const AlignmentParams& params, AlignmentParams* grads,
                      Rng* dropout_rng) {
  const double rate = dropout_rng != nullptr ? params.shape.dropout : 0.0;
  auto P = [&](const Matrix& value, Matrix AlignmentParams::*member) {
    return tape.parameter(value, grads != nullptr ? &(grads->*member) : nullptr);
  };
  Var hidden = relu(add_row(matmul(x, P(params.w1, &AlignmentParams::w1)), P(params.b1, &AlignmentParams::b1)));
  hidden = dropout(hidden, rate, dropout_rng);
  return add_row(matmul(hidden, P(params.w2, &AlignmentParams::w2)), P(params.b2, &AlignmentParams::b2));
}

AlignedVars align(Tape& tape, Var Q, Var P, const AlignmentParams& params, AlignmentParams* grads,
                  Rng* dropout_rng) {
  auto leaf = [&](const Matrix& value, Matrix AlignmentParams::*member) {
    return tape.parameter(value, grads != nullptr ? &(grads->*member) : nullptr);
  };
  const double eps = params.shape.ln_eps;
  const Var mh = multi_head_attention(tape, Q, P, P, params, grads, dropout_rng);
  const Var att = add(layer_norm_rows(mh, leaf(params.ln1_scale, &AlignmentParams::ln1_scale),
                                      leaf(params.ln1_bias, &AlignmentParams::ln1_bias), eps),
                      Q);
  const Var ffn = position_wise_ffn(tape, att, params, grads, dropout_rng);
  const Var F = add(layer_norm_rows(ffn, leaf(params.ln2_scale, &AlignmentParams::ln2_scale),
                                    leaf(params.ln2_bias, &AlignmentParams::ln2_bias), eps),
                    att);
  return {F, att};
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Plain-matrix entry points

Matrix scaled_dot_product_attention(const Matrix& Q, const Matrix& K, const Matrix& V) {
  if (Q.cols() != K.cols()) throw ConfigError("attention: Q and K widths differ");
  if (K.rows() != V.rows()) throw ConfigError("attention: K and V row counts differ");
  Matrix logits(Q.rows(), K.rows());
  kernels::matmul_nt(Q, K, logits);
  const double s = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  for (double& v : logits.values()) v *= s;
  Matrix weights;
  kernels::softmax_rows(logits, {}, weights);
  Matrix out(Q.rows(), V.cols());
  kernels::matmul(weights, V, out);
  return out;
}

Matrix multi_head_attention(const Matrix& Q, const Matrix& K, const Matrix& V,
                            const AlignmentParams& params) {
  ag::Tape tape(false);
  return ag::multi_head_attention(tape, tape.constant(Q), tape.constant(K), tape.constant(V), params,
                                  nullptr, nullptr)
      .value();
}

Matrix position_wise_ffn(const Matrix& x, const AlignmentParams& params) {
  ag::Tape tape(false);
  return ag::position_wise_ffn(tape, tape.constant(x), params, nullptr, nullptr).value();
}

std::vector<double> layer_normalize(std::span<const double> x, std::span<const double> alpha,
                                    std::span<const double> beta, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_normalize: epsilon must be positive");
  if (alpha.size() != x.size() || beta.size() != x.size()) {
    throw ConfigError("layer_normalize: alpha/beta width differs from x");
  }
  Matrix out, normalized, inv_std;
  kernels::layer_norm_rows(Matrix::row_vector(x), Matrix::row_vector(alpha), Matrix::row_vector(beta),
                           eps, out, normalized, inv_std);
  return {out.values().begin(), out.values().end()};
}

AlignedFeatures align(const Matrix& Q, const Matrix& P, const AlignmentParams& params) {
  ag::Tape tape(false);
  const auto vars = ag::align(tape, tape.constant(Q), tape.constant(P), params, nullptr, nullptr);
  return {vars.F.value(), vars.att.value()};
}

std::vector<double> preference_attention_weights(std::span<const double> q, const Matrix& P,
                                                 const AlignmentParams& params) {
  const AlignmentShape& s = params.shape;
  if (q.size() != s.d || P.cols() != s.d) {
    throw ConfigError("preference_attention_weights: q/P width does not match d=" + std::to_string(s.d));
  }
  if (P.rows() == 0) throw ConfigError("preference_attention_weights: no preferences");
  const std::size_t hk = s.heads * s.d_k;
  const Matrix qrow = Matrix::row_vector(q);
  Matrix qc(1, hk);
  Matrix kc(P.rows(), hk);
  Matrix tmp_q(1, s.d_k);
  Matrix tmp_k(P.rows(), s.d_k);
  for (std::size_t h = 0; h < s.heads; ++h) {
    kernels::matmul(qrow, params.wq[h], tmp_q);
    kernels::matmul(P, params.wk[h], tmp_k);
    for (std::size_t c = 0; c < s.d_k; ++c) qc(0, h * s.d_k + c) = tmp_q(0, c);
    for (std::size_t r = 0; r < P.rows(); ++r) {
      for (std::size_t c = 0; c < s.d_k; ++c) kc(r, h * s.d_k + c) = tmp_k(r, c);
    }
  }
  Matrix logits(1, P.rows());
  kernels::matmul_nt(qc, kc, logits);
  const double inv = 1.0 / std::sqrt(static_cast<double>(hk));
  for (double& v : logits.values()) v *= inv;
  Matrix omega;
  kernels::softmax_rows(logits, {}, omega);
  return {omega.values().begin(), omega.values().end()};
}

}  // namespace lane
