#include "lane/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "lane/kernels.hpp"

namespace lane::ag {

const Matrix& Var::value() const { return tape->value(*this); }

void RowGrad::add(std::int32_t row, std::span<const double> g) {
  if (row == 0) return;
  auto [it, inserted] = rows_.try_emplace(row);
  if (inserted) it->second.assign(g.size(), 0.0);
  for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += g[j];
}

void RowGrad::merge(const RowGrad& other) {
  for (const auto& [row, g] : other.rows_) add(row, g);
}

// ---------------------------------------------------------------------------

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value, Matrix* grad) {
  Node n;
  n.borrowed = &value;
  if (recording_ && grad != nullptr) {
    if (!grad->same_shape(value)) {
      throw std::invalid_argument("Tape::parameter: gradient buffer shape mismatch");
    }
    n.needs_grad = true;
    n.backward = [grad](Tape& t, std::int32_t self) { *grad += t.grad_buffer(self); };
  }
  return push(std::move(n));
}

Var Tape::gather_rows(const Matrix& table, std::vector<std::int32_t> indices, RowGrad* sink) {
  Matrix out(indices.size(), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    if (r < 0 || static_cast<std::size_t>(r) >= table.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(r) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    out.set_row(i, table.row(static_cast<std::size_t>(r)));
  }
  Node n;
  n.owned = std::move(out);
  if (recording_ && sink != nullptr) {
    n.needs_grad = true;
    n.backward = [sink, idx = std::move(indices)](Tape& t, std::int32_t self) {
      const Matrix& g = t.grad_buffer(self);
      for (std::size_t i = 0; i < idx.size(); ++i) sink->add(idx[i], g.row(i));
    };
  }
  return push(std::move(n));
}

const Matrix& Tape::value_of(std::int32_t id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

const Matrix& Tape::value(Var v) const {
  if (v.tape != this) throw std::invalid_argument("Tape::value: variable from another tape");
  return value_of(v.id);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) return Matrix::zeros_like(value_of(v.id));
  return n.grad;
}

Matrix& Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Matrix& v = value_of(id);
    n.grad = Matrix(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw std::invalid_argument("Tape::record: input from another tape");
      if (needs_grad(in.id)) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

void Tape::backward(Var root) {
  if (!recording_) throw std::logic_error("Tape::backward on a non-recording tape");
  if (root.tape != this) throw std::invalid_argument("Tape::backward: root from another tape");
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw std::invalid_argument("Tape::backward: root must be 1x1, got " + rv.shape_string());
  }
  grad_buffer(root.id)(0, 0) += 1.0;
  for (std::int32_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.has_grad && n.backward) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Ops.

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

template <class F>
Var unary_map(Var a, F&& f, Tape::BackwardFn back) {
  Matrix out = a.value();
  for (double& v : out.values()) v = f(v);
  return a.tape->record(std::move(out), {a}, std::move(back));
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Var matmul(Var a, Var b) {
  Matrix out;
  kernels::matmul(a.value(), b.value(), out);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(a)) kernels::matmul_nt(g, t.value_of(b), t.grad_buffer(a), true);
    if (t.needs_grad(b)) kernels::matmul_tn(t.value_of(a), g, t.grad_buffer(b), true);
  });
}

Var matmul_nt(Var a, Var b) {
  Matrix out;
  kernels::matmul_nt(a.value(), b.value(), out);
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(a)) kernels::matmul(g, t.value_of(b), t.grad_buffer(a), true);
    if (t.needs_grad(b)) kernels::matmul_tn(g, t.value_of(a), t.grad_buffer(b), true);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Matrix out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(a)) t.grad_buffer(a) += g;
    if (t.needs_grad(b)) t.grad_buffer(b) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= bv.data()[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(a)) t.grad_buffer(a) += g;
    if (t.needs_grad(b)) {
      Matrix& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] -= g.data()[i];
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a.value(), b.value());
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Matrix& ga = t.grad_buffer(a);
      const Matrix& bv = t.value_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * bv.data()[i];
    }
    if (t.needs_grad(b)) {
      Matrix& gb = t.grad_buffer(b);
      const Matrix& av = t.value_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * av.data()[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw std::invalid_argument("add_row: bias " + bv.shape_string() + " does not fit " +
                                av.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv.data()[j];
  }
  return a.tape->record(std::move(out), {a, bias},
                        [a = a.id, b = bias.id](Tape& t, std::int32_t self) {
                          const Matrix& g = t.grad_buffer(self);
                          if (t.needs_grad(a)) t.grad_buffer(a) += g;
                          if (t.needs_grad(b)) {
                            Matrix& gb = t.grad_buffer(b);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              for (std::size_t j = 0; j < g.cols(); ++j) gb.data()[j] += g(r, j);
                            }
                          }
                        });
}

Var scale(Var a, double s) {
  return unary_map(a, [s](double v) { return v * s; },
                   [a = a.id, s](Tape& t, std::int32_t self) {
                     const Matrix& g = t.grad_buffer(self);
                     Matrix& ga = t.grad_buffer(a);
                     for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
                   });
}

Var relu(Var a) {
  return unary_map(a, [](double v) { return v > 0.0 ? v : 0.0; },
                   [a = a.id](Tape& t, std::int32_t self) {
                     const Matrix& g = t.grad_buffer(self);
                     const Matrix& x = t.value_of(a);
                     Matrix& ga = t.grad_buffer(a);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
                     }
                   });
}

Var sigmoid(Var a) {
  return unary_map(a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                   [a = a.id](Tape& t, std::int32_t self) {
                     const Matrix& g = t.grad_buffer(self);
                     const Matrix& y = t.value_of(self);
                     Matrix& ga = t.grad_buffer(a);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double s = y.data()[i];
                       ga.data()[i] += g.data()[i] * s * (1.0 - s);
                     }
                   });
}

Var tanh(Var a) {
  return unary_map(a, [](double v) { return std::tanh(v); },
                   [a = a.id](Tape& t, std::int32_t self) {
                     const Matrix& g = t.grad_buffer(self);
                     const Matrix& y = t.value_of(self);
                     Matrix& ga = t.grad_buffer(a);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double v = y.data()[i];
                       ga.data()[i] += g.data()[i] * (1.0 - v * v);
                     }
                   });
}

Var softmax_rows(Var a, std::vector<std::uint8_t> mask) {
  Matrix out;
  kernels::softmax_rows(a.value(), mask, out);
  return a.tape->record(std::move(out), {a}, [a = a.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& y = t.value_of(self);
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) inner += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(r, j) += y(r, j) * (g(r, j) - inner);
    }
  });
}

Var layer_norm_rows(Var x, Var scale_v, Var bias_v, double eps) {
  Matrix out, normalized, inv_std;
  kernels::layer_norm_rows(x.value(), scale_v.value(), bias_v.value(), eps, out, normalized,
                           inv_std);
  return x.tape->record(
      std::move(out), {x, scale_v, bias_v},
      [x = x.id, s = scale_v.id, b = bias_v.id, xhat = std::move(normalized),
       inv = std::move(inv_std)](Tape& t, std::int32_t self) {
        const Matrix& g = t.grad_buffer(self);
        const std::size_t d = g.cols();
        if (t.needs_grad(s)) {
          Matrix& gs = t.grad_buffer(s);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < d; ++j) gs.data()[j] += g(r, j) * xhat(r, j);
        }
        if (t.needs_grad(b)) {
          Matrix& gb = t.grad_buffer(b);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < d; ++j) gb.data()[j] += g(r, j);
        }
        if (t.needs_grad(x)) {
          const Matrix& sv = t.value_of(s);
          Matrix& gx = t.grad_buffer(x);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            double sum_g = 0.0;
            double sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g(r, j) * sv.data()[j];
              sum_g += gh;
              sum_gx += gh * xhat(r, j);
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g(r, j) * sv.data()[j];
              gx(r, j) += inv(r, 0) * (gh - inv_d * sum_g - xhat(r, j) * inv_d * sum_gx);
            }
          }
        }
      });
}

Var dropout(Var a, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = rng->uniform() >= rate ? keep_scale : 0.0;
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mask.data()[i];
  return a.tape->record(std::move(out), {a},
                        [a = a.id, mask = std::move(mask)](Tape& t, std::int32_t self) {
                          const Matrix& g = t.grad_buffer(self);
                          Matrix& ga = t.grad_buffer(a);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga.data()[i] += g.data()[i] * mask.data()[i];
                        });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& av = a.value();
  if (begin + count > av.cols()) throw std::out_of_range("slice_cols: range exceeds width");
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = av(r, begin + j);
  return a.tape->record(std::move(out), {a},
                        [a = a.id, begin, count](Tape& t, std::int32_t self) {
                          const Matrix& g = t.grad_buffer(self);
                          Matrix& ga = t.grad_buffer(a);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                            for (std::size_t j = 0; j < count; ++j) ga(r, begin + j) += g(r, j);
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(r, off + j) = pv(r, j);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += pv.cols();
  }
  return parts[0].tape->record(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::int32_t self) {
        const Matrix& g = t.grad_buffer(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.needs_grad(ids[p])) continue;
          Matrix& gp = t.grad_buffer(ids[p]);
          for (std::size_t r = 0; r < gp.rows(); ++r)
            for (std::size_t j = 0; j < gp.cols(); ++j) gp(r, j) += g(r, offsets[p] + j);
        }
      });
}

Var row(Var a, std::size_t r) {
  const Matrix& av = a.value();
  if (r >= av.rows()) throw std::out_of_range("row: index out of range");
  return a.tape->record(Matrix::row_vector(av.row(r)), {a}, [a = a.id, r](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    auto dst = t.grad_buffer(a).row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g.data()[j];
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t cols = rows[0].cols();
  Matrix out(rows.size(), cols);
  std::vector<std::int32_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& v = rows[i].value();
    if (v.rows() != 1 || v.cols() != cols) throw std::invalid_argument("stack_rows: expected 1 x d rows");
    out.set_row(i, v.row(0));
    ids.push_back(rows[i].id);
  }
  return rows[0].tape->record(std::move(out), rows, [ids = std::move(ids)](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      auto dst = t.grad_buffer(ids[i]).row(0);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g(i, j);
    }
  });
}

Var rows_dot(Var a, Var b) {
  require_same_shape("rows_dot", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out(r, 0) = dot(av.row(r), bv.row(r));
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_buffer(self);
    const Matrix& av = t.value_of(a);
    const Matrix& bv = t.value_of(b);
    if (t.needs_grad(a)) {
      Matrix& ga = t.grad_buffer(a);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t j = 0; j < av.cols(); ++j) ga(r, j) += g(r, 0) * bv(r, j);
    }
    if (t.needs_grad(b)) {
      Matrix& gb = t.grad_buffer(b);
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t j = 0; j < av.cols(); ++j) gb(r, j) += g(r, 0) * av(r, j);
    }
  });
}

Var masked_bce(Var pos, Var neg, std::vector<std::uint8_t> valid) {
  const Matrix& p = pos.value();
  const Matrix& n = neg.value();
  if (p.cols() != 1 || !p.same_shape(n) || valid.size() != p.rows()) {
    throw std::invalid_argument("masked_bce: expected aligned column vectors and mask");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (valid[i] == 0) continue;
    // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    loss += softplus(-p(i, 0)) + softplus(n(i, 0));
  }
  Matrix out(1, 1, loss);
  return pos.tape->record(std::move(out), {pos, neg},
                          [p = pos.id, n = neg.id, valid = std::move(valid)](Tape& t, std::int32_t self) {
                            const double g = t.grad_buffer(self)(0, 0);
                            const Matrix& pv = t.value_of(p);
                            const Matrix& nv = t.value_of(n);
                            for (std::size_t i = 0; i < valid.size(); ++i) {
                              if (valid[i] == 0) continue;
                              if (t.needs_grad(p)) {
                                const double s = 1.0 / (1.0 + std::exp(-pv(i, 0)));
                                t.grad_buffer(p)(i, 0) += g * (s - 1.0);
                              }
                              if (t.needs_grad(n)) {
                                const double s = 1.0 / (1.0 + std::exp(-nv(i, 0)));
                                t.grad_buffer(n)(i, 0) += g * s;
                              }
                            }
                          });
}

Var sum(Var a) {
  double s = 0.0;
  for (const double v : a.value().values()) s += v;
  return a.tape->record(Matrix(1, 1, s), {a}, [a = a.id](Tape& t, std::int32_t self) {
    const double g = t.grad_buffer(self)(0, 0);
    for (double& v : t.grad_buffer(a).values()) v += g;
  });
}

}  // namespace lane::ag
