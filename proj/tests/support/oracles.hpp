#pragma once

// Straight-line reference computations for tests. Nothing here calls the
// library's kernels or tape, so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lane/alignment.hpp"
#include "lane/matrix.hpp"
#include "lane/random.hpp"

namespace oracle {

using lane::Matrix;
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, lane::Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

inline Mat to_mat(const Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < c[i].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.empty() ? 0 : a[0].size(), Vec(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
  }
  return t;
}

inline Vec softmax(const Vec& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  Vec e(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += e[i] = std::exp(x[i] - mx);
  for (double& v : e) v /= s;
  return e;
}

inline Vec layer_norm(const Vec& x, const Vec& alpha, const Vec& beta, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha[i] * (x[i] - mean) / std::sqrt(var + eps) + beta[i];
  return out;
}

inline Vec row0(const Matrix& m) { return to_mat(m)[0]; }

/// Cross-attention block written out term by term.
/// head_i = softmax(Q Wq_i (P Wk_i)^T / sqrt(d_k)) P Wv_i
/// att    = LN1(concat(head_i) Wo) + Q
/// F      = LN2(relu(att W1 + b1) W2 + b2) + att
inline std::pair<Mat, Mat> align(const Matrix& Qm, const Matrix& Pm, const lane::AlignmentParams& p) {
  const Mat Q = to_mat(Qm), P = to_mat(Pm);
  const std::size_t n = Q.size(), d = Q[0].size(), m = P.size(), h = p.shape.heads, dk = p.shape.d_k;
  Mat concat(n, Vec(h * dk, 0.0));
  for (std::size_t head = 0; head < h; ++head) {
    const Mat q = mul(Q, to_mat(p.wq[head]));
    const Mat k = mul(P, to_mat(p.wk[head]));
    const Mat v = mul(P, to_mat(p.wv[head]));
    for (std::size_t t = 0; t < n; ++t) {
      Vec logits(m);
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q[t][c] * k[j][c];
        logits[j] = s / std::sqrt(static_cast<double>(dk));
      }
      const Vec w = softmax(logits);
      for (std::size_t c = 0; c < dk; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += w[j] * v[j][c];
        concat[t][head * dk + c] = s;
      }
    }
  }
  const Mat mh = mul(concat, to_mat(p.wo));
  const Vec a1 = row0(p.ln1_scale), g1 = row0(p.ln1_bias), a2 = row0(p.ln2_scale), g2 = row0(p.ln2_bias);
  const Mat W1 = to_mat(p.w1), W2 = to_mat(p.w2);
  const Vec b1 = row0(p.b1), b2 = row0(p.b2);
  Mat att(n), F(n);
  for (std::size_t t = 0; t < n; ++t) {
    att[t] = layer_norm(mh[t], a1, g1, p.shape.ln_eps);
    for (std::size_t c = 0; c < d; ++c) att[t][c] += Q[t][c];
    Vec hidden(d), out(d);
    for (std::size_t j = 0; j < d; ++j) {
      double s = b1[j];
      for (std::size_t c = 0; c < d; ++c) s += att[t][c] * W1[c][j];
      hidden[j] = std::max(0.0, s);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = b2[j];
      for (std::size_t c = 0; c < d; ++c) s += hidden[c] * W2[c][j];
      out[j] = s;
    }
    F[t] = layer_norm(out, a2, g2, p.shape.ln_eps);
    for (std::size_t c = 0; c < d; ++c) F[t][c] += att[t][c];
  }
  return {F, att};
}

/// omega_j = softmax_j( <concat_i(q Wq_i), concat_i(p_j Wk_i)> / sqrt(h d_k) )
inline Vec preference_weights(const Vec& q, const Matrix& Pm, const lane::AlignmentParams& p) {
  const Mat P = to_mat(Pm);
  const std::size_t h = p.shape.heads, dk = p.shape.d_k;
  Vec qc, logits(P.size(), 0.0);
  for (std::size_t head = 0; head < h; ++head) {
    const Mat qh = mul(Mat{q}, to_mat(p.wq[head]));
    qc.insert(qc.end(), qh[0].begin(), qh[0].end());
  }
  for (std::size_t j = 0; j < P.size(); ++j) {
    Vec kc;
    for (std::size_t head = 0; head < h; ++head) {
      const Mat kh = mul(Mat{P[j]}, to_mat(p.wk[head]));
      kc.insert(kc.end(), kh[0].begin(), kh[0].end());
    }
    double s = 0.0;
    for (std::size_t c = 0; c < qc.size(); ++c) s += qc[c] * kc[c];
    logits[j] = s / std::sqrt(static_cast<double>(h * dk));
  }
  return softmax(logits);
}

/// Rank by full descending sort; among equal scores the target sorts first.
inline std::size_t sorted_rank(const Vec& scores, std::size_t target) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if ((a == target) != (b == target)) return a == target;
    return a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

inline double max_abs_diff(const Mat& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b(i, j)));
  }
  return worst;
}

/// Central difference of f with respect to *x.
inline double central_difference(double* x, double h, const std::function<double()>& f) {
  const double saved = *x;
  *x = saved + h;
  const double up = f();
  *x = saved - h;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * h);
}

/// Gradient-check relative error with an absolute floor for near-zero entries.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("lane-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(LANE_FIXTURE_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace oracle
