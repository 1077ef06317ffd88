#include "lane/backbone.hpp"

#include <cmath>

#include "lane/error.hpp"

namespace lane {

std::string to_string(BackboneVariant v) {
  return v == BackboneVariant::self_attention ? "self_attention" : "gated_recurrent";
}

BackboneVariant parse_backbone_variant(const std::string& name) {
  if (name == "self_attention" || name == "sasrec") return BackboneVariant::self_attention;
  if (name == "gated_recurrent" || name == "gru4rec") return BackboneVariant::gated_recurrent;
  throw ConfigError("unknown backbone variant '" + name + "'");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <class Params, class Out>
void collect(Params& p, Out& out) {
  out.emplace_back("positional", &p.positional);
  for (std::size_t b = 0; b < p.attention.size(); ++b) {
    auto& blk = p.attention[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.emplace_back(pre + "ln1_scale", &blk.ln1_scale);
    out.emplace_back(pre + "ln1_bias", &blk.ln1_bias);
    out.emplace_back(pre + "wq", &blk.wq);
    out.emplace_back(pre + "wk", &blk.wk);
    out.emplace_back(pre + "wv", &blk.wv);
    out.emplace_back(pre + "wo", &blk.wo);
    out.emplace_back(pre + "bq", &blk.bq);
    out.emplace_back(pre + "bk", &blk.bk);
    out.emplace_back(pre + "bv", &blk.bv);
    out.emplace_back(pre + "bo", &blk.bo);
    out.emplace_back(pre + "ln2_scale", &blk.ln2_scale);
    out.emplace_back(pre + "ln2_bias", &blk.ln2_bias);
    out.emplace_back(pre + "w1", &blk.w1);
    out.emplace_back(pre + "b1", &blk.b1);
    out.emplace_back(pre + "w2", &blk.w2);
    out.emplace_back(pre + "b2", &blk.b2);
  }
  for (std::size_t l = 0; l < p.recurrent.size(); ++l) {
    auto& layer = p.recurrent[l];
    const std::string pre = "gru" + std::to_string(l) + ".";
    out.emplace_back(pre + "w_input", &layer.w_input);
    out.emplace_back(pre + "w_hidden", &layer.w_hidden);
    out.emplace_back(pre + "b_input", &layer.b_input);
    out.emplace_back(pre + "b_hidden", &layer.b_hidden);
  }
  if (!p.final_scale.empty()) {
    out.emplace_back("final_scale", &p.final_scale);
    out.emplace_back("final_bias", &p.final_bias);
  }
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> BackboneParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> BackboneParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  collect(*this, out);
  return out;
}

BackboneParams BackboneParams::zeros_like() const {
  BackboneParams z = *this;
  for (auto& [name, m] : z.tensors()) m->fill(0.0);
  return z;
}

std::size_t BackboneParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, m] : tensors()) total += m->size();
  return total;
}

bool BackboneParams::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->all_finite()) return false;
  }
  return true;
}

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

BackboneParams init_backbone(const BackboneShape& shape, Rng& rng, double pe_scale) {
  const std::size_t d = shape.d;
  if (shape.n == 0 || d == 0) throw ConfigError("backbone: n and d must be positive");
  if (shape.blocks == 0) throw ConfigError("backbone.blocks must be positive");
  if (shape.dropout < 0.0 || shape.dropout >= 1.0) {
    throw ConfigError("backbone.dropout must lie in [0, 1)");
  }
  BackboneParams p;
  p.shape = shape;
  p.positional = Matrix(shape.n, d);
  for (double& v : p.positional.values()) v = rng.uniform(-pe_scale, pe_scale);

  if (shape.variant == BackboneVariant::self_attention) {
    if (shape.heads == 0 || d % shape.heads != 0) {
      throw ConfigError("backbone.heads must divide d (d=" + std::to_string(d) +
                        ", heads=" + std::to_string(shape.heads) + ")");
    }
    for (std::size_t b = 0; b < shape.blocks; ++b) {
      AttentionBlock blk;
      blk.ln1_scale = Matrix(1, d, 1.0);
      blk.ln1_bias = Matrix(1, d);
      blk.wq = xavier_uniform(d, d, rng);
      blk.wk = xavier_uniform(d, d, rng);
      blk.wv = xavier_uniform(d, d, rng);
      blk.wo = xavier_uniform(d, d, rng);
      blk.bq = blk.bk = blk.bv = blk.bo = Matrix(1, d);
      blk.ln2_scale = Matrix(1, d, 1.0);
      blk.ln2_bias = Matrix(1, d);
      blk.w1 = xavier_uniform(d, d, rng);
      blk.w2 = xavier_uniform(d, d, rng);
      blk.b1 = blk.b2 = Matrix(1, d);
      p.attention.push_back(std::move(blk));
    }
    p.final_scale = Matrix(1, d, 1.0);
    p.final_bias = Matrix(1, d);
  } else {
    for (std::size_t l = 0; l < shape.blocks; ++l) {
      RecurrentLayer layer;
      layer.w_input = xavier_uniform(d, 3 * d, rng);
      layer.w_hidden = xavier_uniform(d, 3 * d, rng);
      layer.b_input = Matrix(1, 3 * d);
      layer.b_hidden = Matrix(1, 3 * d);
      p.recurrent.push_back(std::move(layer));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void check_embedding_shapes(const PaddedSequence& seq, const Matrix& M, const BackboneParams& p) {
  if (seq.length() != p.positional.rows()) {
    throw ConfigError("sequence length " + std::to_string(seq.length()) +
                      " does not match the positional table (" +
                      std::to_string(p.positional.rows()) + " rows)");
  }
  if (M.cols() != p.positional.cols()) {
    throw ConfigError("embedding width " + std::to_string(M.cols()) +
                      " does not match backbone d=" + std::to_string(p.positional.cols()));
  }
}

void check_finite(const ag::Var& v, const std::string& where) {
  if (!v.value().all_finite()) throw NumericError("non-finite activations in backbone " + where);
}

Matrix* grad_of(BackboneParams* grads, Matrix BackboneParams::*member) {
  return grads != nullptr ? &(grads->*member) : nullptr;
}

}  // namespace

Matrix embed_with_positions(const PaddedSequence& seq, const Matrix& M, const BackboneParams& params) {
  ag::Tape tape(false);
  return ag::embed_with_positions(tape, seq, M, params, {}).value();
}

SequenceFeatures encode_sequence(const Matrix& E, const std::vector<std::uint8_t>& valid_mask,
                                 const BackboneParams& params) {
  ag::Tape tape(false);
  const ag::Var e = tape.constant(E);
  return {ag::encode_sequence(tape, e, valid_mask, params, nullptr, nullptr).value(), valid_mask};
}

namespace ag {

Var embed_with_positions(Tape& tape, const PaddedSequence& seq, const Matrix& M,
                         const BackboneParams& params, const BackboneGrads& grads) {
  check_embedding_shapes(seq, M, params);
  const Var items = tape.gather_rows(M, seq.indices, grads.embedding);
  const Var pe = tape.parameter(params.positional, grad_of(grads.params, &BackboneParams::positional));
  return add(items, pe);
}

namespace {

Var attention_block(Tape& tape, Var x, const std::vector<std::uint8_t>& attn_mask,
                    const AttentionBlock& blk, AttentionBlock* g, std::size_t heads, double eps,
                    double rate, Rng* rng) {
  auto P = [&](const Matrix& value, Matrix AttentionBlock::*member) {
    return tape.parameter(value, g != nullptr ? &(g->*member) : nullptr);
  };
  const std::size_t d = x.cols();
  const std::size_t dh = d / heads;

  const Var normed = layer_norm_rows(x, P(blk.ln1_scale, &AttentionBlock::ln1_scale),
                                     P(blk.ln1_bias, &AttentionBlock::ln1_bias), eps);
  const Var q = add_row(matmul(normed, P(blk.wq, &AttentionBlock::wq)), P(blk.bq, &AttentionBlock::bq));
  const Var k = add_row(matmul(x, P(blk.wk, &AttentionBlock::wk)), P(blk.bk, &AttentionBlock::bk));
  const Var v = add_row(matmul(x, P(blk.wv, &AttentionBlock::wv)), P(blk.bv, &AttentionBlock::bv));

  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    Var w = softmax_rows(scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))), attn_mask);
    w = dropout(w, rate, rng);
    head_out.push_back(matmul(w, vh));
  }
  const Var mha = add_row(matmul(heads == 1 ? head_out[0] : concat_cols(head_out),
                                 P(blk.wo, &AttentionBlock::wo)),
                          P(blk.bo, &AttentionBlock::bo));
  const Var h1 = add(normed, dropout(mha, rate, rng));

  const Var n2 = layer_norm_rows(h1, P(blk.ln2_scale, &AttentionBlock::ln2_scale),
                                 P(blk.ln2_bias, &AttentionBlock::ln2_bias), eps);
  Var hidden = relu(add_row(matmul(n2, P(blk.w1, &AttentionBlock::w1)), P(blk.b1, &AttentionBlock::b1)));
  hidden = dropout(hidden, rate, rng);
  const Var ffn = add_row(matmul(hidden, P(blk.w2, &AttentionBlock::w2)), P(blk.b2, &AttentionBlock::b2));
  return add(n2, dropout(ffn, rate, rng));
}

// Pad steps emit zero features and leave the hidden state untouched, so the
// recurrence effectively starts at the first real item.
Var recurrent_layer(Tape& tape, Var x, const std::vector<std::uint8_t>& valid_mask,
                    const RecurrentLayer& layer, RecurrentLayer* g) {
  auto P = [&](const Matrix& value, Matrix RecurrentLayer::*member) {
    return tape.parameter(value, g != nullptr ? &(g->*member) : nullptr);
  };
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const Var w_hidden = P(layer.w_hidden, &RecurrentLayer::w_hidden);
  const Var b_hidden = P(layer.b_hidden, &RecurrentLayer::b_hidden);
  const Var gi = add_row(matmul(x, P(layer.w_input, &RecurrentLayer::w_input)),
                         P(layer.b_input, &RecurrentLayer::b_input));

  Var h = tape.constant(Matrix(1, d));
  const Var zero_row = tape.constant(Matrix(1, d));
  std::vector<Var> outputs;
  outputs.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (valid_mask[t] == 0) {
      outputs.push_back(zero_row);
      continue;
    }
    const Var xt = row(gi, t);
    const Var ht = add_row(matmul(h, w_hidden), b_hidden);
    const Var r = sigmoid(add(slice_cols(xt, 0, d), slice_cols(ht, 0, d)));
    const Var z = sigmoid(add(slice_cols(xt, d, d), slice_cols(ht, d, d)));
    const Var cand = tanh(add(slice_cols(xt, 2 * d, d), hadamard(r, slice_cols(ht, 2 * d, d))));
    h = add(cand, hadamard(z, sub(h, cand)));
    outputs.push_back(h);
  }
  return stack_rows(outputs);
}

}  // namespace

Var encode_sequence(Tape& tape, Var E, const std::vector<std::uint8_t>& valid_mask,
                    const BackboneParams& params, BackboneParams* grads, Rng* dropout_rng) {
  const BackboneShape& shape = params.shape;
  const std::size_t n = E.rows();
  if (E.cols() != shape.d) {
    throw ConfigError("encode_sequence: input width " + std::to_string(E.cols()) +
                      " but backbone d=" + std::to_string(shape.d));
  }
  if (valid_mask.size() != n) throw ConfigError("encode_sequence: mask length does not match input");
  if (!E.value().all_finite()) throw NumericError("non-finite input to the backbone");
  const double rate = dropout_rng != nullptr ? shape.dropout : 0.0;

  Var x = dropout(E, rate, dropout_rng);
  if (shape.variant == BackboneVariant::self_attention) {
    // Query t sees keys s <= t that are real items.
    std::vector<std::uint8_t> attn_mask(n * n, 0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t s = 0; s <= t; ++s) attn_mask[t * n + s] = valid_mask[s];
    }
    for (std::size_t b = 0; b < params.attention.size(); ++b) {
      x = attention_block(tape, x, attn_mask, params.attention[b],
                          grads != nullptr ? &grads->attention[b] : nullptr, shape.heads,
                          shape.ln_eps, rate, dropout_rng);
      check_finite(x, "block " + std::to_string(b));
    }
    x = layer_norm_rows(x, tape.parameter(params.final_scale, grad_of(grads, &BackboneParams::final_scale)),
                        tape.parameter(params.final_bias, grad_of(grads, &BackboneParams::final_bias)),
                        shape.ln_eps);
    check_finite(x, "final layer norm");
  } else {
    for (std::size_t l = 0; l < params.recurrent.size(); ++l) {
      x = recurrent_layer(tape, x, valid_mask, params.recurrent[l],
                          grads != nullptr ? &grads->recurrent[l] : nullptr);
      check_finite(x, "layer " + std::to_string(l));
    }
  }
  return x;
}

}  // namespace ag

}  // namespace lane
