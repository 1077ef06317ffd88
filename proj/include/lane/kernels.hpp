#pragma once

#include <cstdint>
#include <span>

#include "lane/matrix.hpp"

// Dense kernels used by the autograd tape.
//
// `serial::` holds the textbook reference loops (kept for tests and the
// benchmark). `parallel::` holds the OpenMP versions that the library calls.
// The parallel loops split work over output rows only, so every output
// element is reduced in the same order no matter how many threads run:
// results are bitwise reproducible across thread counts.
namespace lane::kernels {

/// Row-wise mask for softmax: 1 keeps a logit, 0 drops it. Empty span = no mask.
using Mask = std::span<const std::uint8_t>;

namespace serial {
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void softmax_rows(const Matrix& x, Mask mask, Matrix& out);
void layer_norm_rows(const Matrix& x, const Matrix& scale, const Matrix& bias, double eps,
                     Matrix& out, Matrix& normalized, Matrix& inv_std);
}  // namespace serial

namespace parallel {
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void softmax_rows(const Matrix& x, Mask mask, Matrix& out);
void layer_norm_rows(const Matrix& x, const Matrix& scale, const Matrix& bias, double eps,
                     Matrix& out, Matrix& normalized, Matrix& inv_std);
}  // namespace parallel

// Library entry points.
using parallel::layer_norm_rows;
using parallel::matmul;
using parallel::matmul_nt;
using parallel::matmul_tn;
using parallel::softmax_rows;

/// Work (multiply-adds) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelWorkThreshold = 1u << 15;

int max_threads();

}  // namespace lane::kernels
