#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lane/matrix.hpp"
#include "lane/random.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradSample {
  std::string tensor;
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

/// Central-difference check of `per_tensor` entries drawn from each named
/// parameter; `analytic(name, entry)` returns the tape gradient.
inline std::vector<GradSample> sample_gradients(
    const std::vector<std::pair<std::string, lane::Matrix*>>& params,
    const std::function<double(const std::string&, std::size_t)>& analytic,
    const std::function<double()>& loss, std::size_t per_tensor, lane::Rng& rng, double h = 1e-6) {
  std::vector<GradSample> out;
  for (const auto& [name, m] : params) {
    if (m->size() == 0) continue;
    for (std::size_t s = 0; s < per_tensor; ++s) {
      const std::size_t e = rng.below(m->size());
      GradSample g{name, e, analytic(name, e), 0.0, 0.0};
      g.numeric = central_difference(m->data() + e, h, loss);
      g.error = relative_error(g.analytic, g.numeric, 1e-5);
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace oracle
