#include "lane/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lane::kernels {
namespace {

void check_inner(const char* op, std::size_t lhs, std::size_t rhs) {
  if (lhs != rhs) {
    throw std::invalid_argument(std::string(op) + ": inner dimension mismatch (" +
                                std::to_string(lhs) + " vs " + std::to_string(rhs) + ")");
  }
}

void prepare_output(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) {
      throw std::invalid_argument("kernel: accumulate target has wrong shape " + c.shape_string());
    }
    return;
  }
  if (c.rows() != rows || c.cols() != cols) {
    c = Matrix(rows, cols);
  } else {
    c.fill(0.0);
  }
}

void check_mask(const Matrix& x, Mask mask) {
  if (!mask.empty() && mask.size() != x.size()) {
    throw std::invalid_argument("softmax_rows: mask size does not match logits");
  }
}

void softmax_row(const double* x, const std::uint8_t* mask, std::size_t n, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (mask == nullptr || mask[j] != 0) mx = std::max(mx, x[j]);
  }
  // Fully masked row: no key to attend to, emit zeros.
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(out, out + n, 0.0);
    return;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = (mask == nullptr || mask[j] != 0) ? std::exp(x[j] - mx) : 0.0;
    out[j] = e;
    total += e;
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

void layer_norm_row(const double* x, const double* scale, const double* bias, double eps,
                    std::size_t d, double* out, double* normalized, double* inv_std) {
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  *inv_std = inv;
  for (std::size_t j = 0; j < d; ++j) {
    normalized[j] = (x[j] - mean) * inv;
    out[j] = scale[j] * normalized[j] + bias[j];
  }
}

void check_layer_norm(const Matrix& x, const Matrix& scale, const Matrix& bias, double eps) {
  if (scale.size() != x.cols() || bias.size() != x.cols()) {
    throw std::invalid_argument("layer_norm_rows: scale/bias width mismatch");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm_rows: eps must be positive");
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// Reference loops.

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul", a.cols(), b.rows());
  prepare_output(c, a.rows(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) += s;
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul_nt", a.cols(), b.cols());
  prepare_output(c, a.rows(), b.rows(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) += s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul_tn", a.rows(), b.rows());
  prepare_output(c, a.cols(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) += s;
    }
  }
}

void softmax_rows(const Matrix& x, Mask mask, Matrix& out) {
  check_mask(x, mask);
  if (!out.same_shape(x)) out = Matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    softmax_row(x.row(r).data(), mask.empty() ? nullptr : mask.data() + r * x.cols(), x.cols(),
                out.row(r).data());
  }
}

void layer_norm_rows(const Matrix& x, const Matrix& scale, const Matrix& bias, double eps,
                     Matrix& out, Matrix& normalized, Matrix& inv_std) {
  check_layer_norm(x, scale, bias, eps);
  out = Matrix(x.rows(), x.cols());
  normalized = Matrix(x.rows(), x.cols());
  inv_std = Matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    layer_norm_row(x.row(r).data(), scale.data(), bias.data(), eps, x.cols(), out.row(r).data(),
                   normalized.row(r).data(), &inv_std(r, 0));
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions. Each output row is owned by exactly one thread.

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul", a.cols(), b.rows());
  prepare_output(c, a.rows(), b.cols(), accumulate);
  const auto rows = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t cols = b.cols();
  const bool big = a.rows() * inner * cols >= kParallelWorkThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * cols;
    const double* arow = a.data() + static_cast<std::size_t>(i) * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = arow[k];
      const double* brow = b.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul_nt", a.cols(), b.cols());
  prepare_output(c, a.rows(), b.rows(), accumulate);
  const auto rows = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t cols = b.rows();
  const bool big = a.rows() * inner * cols >= kParallelWorkThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * inner;
    double* crow = c.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const double* brow = b.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
      crow[j] += s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_inner("matmul_tn", a.rows(), b.rows());
  prepare_output(c, a.cols(), b.cols(), accumulate);
  const auto rows = static_cast<std::int64_t>(a.cols());
  const std::size_t inner = a.rows();
  const std::size_t cols = b.cols();
  const std::size_t a_cols = a.cols();
  const bool big = a.cols() * inner * cols >= kParallelWorkThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a.data()[k * a_cols + static_cast<std::size_t>(i)];
      const double* brow = b.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

void softmax_rows(const Matrix& x, Mask mask, Matrix& out) {
  check_mask(x, mask);
  if (!out.same_shape(x)) out = Matrix(x.rows(), x.cols());
  const auto rows = static_cast<std::int64_t>(x.rows());
  const std::size_t cols = x.cols();
  const bool big = x.size() >= kParallelWorkThreshold / 8;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    softmax_row(x.data() + ur * cols, mask.empty() ? nullptr : mask.data() + ur * cols, cols,
                out.data() + ur * cols);
  }
}

void layer_norm_rows(const Matrix& x, const Matrix& scale, const Matrix& bias, double eps,
                     Matrix& out, Matrix& normalized, Matrix& inv_std) {
  check_layer_norm(x, scale, bias, eps);
  out = Matrix(x.rows(), x.cols());
  normalized = Matrix(x.rows(), x.cols());
  inv_std = Matrix(x.rows(), 1);
  const auto rows = static_cast<std::int64_t>(x.rows());
  const std::size_t cols = x.cols();
  const bool big = x.size() >= kParallelWorkThreshold / 8;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    layer_norm_row(x.data() + ur * cols, scale.data(), bias.data(), eps, cols,
                   out.data() + ur * cols, normalized.data() + ur * cols, inv_std.data() + ur);
  }
}

}  // namespace parallel
}  // namespace lane::kernels
