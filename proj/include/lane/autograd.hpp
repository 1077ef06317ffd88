#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "lane/matrix.hpp"
#include "lane/random.hpp"

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records the forward computation as a list of nodes; backward()
// walks it in reverse. Parameters are borrowed leaves whose gradients are
// accumulated into caller-owned buffers, so one parameter set can be shared
// read-only by many tapes running on different threads.
namespace lane::ag {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Sparse per-row gradient of a lookup table. Row 0 (padding) is never stored.
class RowGrad {
 public:
  RowGrad() = default;
  explicit RowGrad(std::size_t cols) : cols_(cols) {}

  void add(std::int32_t row, std::span<const double> g);
  void merge(const RowGrad& other);
  void clear() { rows_.clear(); }
  bool empty() const { return rows_.empty(); }
  std::size_t cols() const { return cols_; }
  const std::map<std::int32_t, std::vector<double>>& rows() const { return rows_; }

 private:
  std::size_t cols_ = 0;
  std::map<std::int32_t, std::vector<double>> rows_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::int32_t)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  /// `value` is borrowed and must outlive the tape. A null `grad` makes the
  /// leaf a constant.
  Var parameter(const Matrix& value, Matrix* grad);
  /// Rows of a borrowed lookup table; gradients scatter into `sink`.
  Var gather_rows(const Matrix& table, std::vector<std::int32_t> indices, RowGrad* sink);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() root with respect to v (zeros if unused).
  Matrix grad(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates. root must be 1 x 1.
  void backward(Var root);

  // Op-author interface.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);
  bool needs_grad(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first use.
  Matrix& grad_buffer(std::int32_t id);
  const Matrix& value_of(std::int32_t id) const;

 private:
  struct Node {
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  bool recording_;
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
/// Adds a 1 x cols row vector to every row of a.
Var add_row(Var a, Var bias);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Row-wise softmax; mask entries equal to 0 are excluded. Fully masked rows yield zeros.
Var softmax_rows(Var a, std::vector<std::uint8_t> mask = {});
Var layer_norm_rows(Var x, Var scale, Var bias, double eps);
/// Inverted dropout. Identity when rng is null or rate is 0.
Var dropout(Var a, double rate, Rng* rng);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var row(Var a, std::size_t r);
Var stack_rows(std::span<const Var> rows);
/// out(i) = <a_i, b_i>, shape rows x 1.
Var rows_dot(Var a, Var b);
/// -sum over valid i of [log sigmoid(pos_i) + log(1 - sigmoid(neg_i))], shape 1 x 1.
Var masked_bce(Var pos, Var neg, std::vector<std::uint8_t> valid);
Var sum(Var a);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

}  // namespace lane::ag
