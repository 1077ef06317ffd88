#pragma once

#include "lane/model.hpp"
#include "oracles.hpp"

namespace oracle {

struct TinySpec {
  lane::BackboneVariant variant = lane::BackboneVariant::self_attention;
  bool use_alignment = true;
  std::size_t d = 6, n = 5, items = 8, blocks = 2, heads = 2, align_heads = 2, d_k = 3;
  double dropout = 0.0;
  std::uint64_t seed = 1;
};

/// Random model with every tensor perturbed away from its structured init
/// (unit LN scales, zero biases), so gradient checks exercise all terms.
inline lane::LaneModel tiny_model(const TinySpec& s) {
  lane::Rng rng(s.seed);
  lane::Matrix M = random_matrix(s.items + 1, s.d, rng, 0.8);
  for (std::size_t c = 0; c < s.d; ++c) M(0, c) = 0.0;
  lane::BackboneShape b;
  b.variant = s.variant;
  b.n = s.n;
  b.d = s.d;
  b.blocks = s.blocks;
  b.heads = s.heads;
  b.dropout = s.dropout;
  lane::AlignmentShape a;
  a.d = s.d;
  a.heads = s.align_heads;
  a.d_k = s.d_k;
  a.dropout = s.dropout;
  lane::LaneModel model = lane::init_model(M, b, a, s.use_alignment, rng);
  for (auto& [name, t] : model.tensors()) {
    if (name == "M") continue;
    for (double& x : t->values()) x += rng.uniform(-0.2, 0.2);
  }
  return model;
}

inline lane::Matrix tiny_preferences(std::size_t m, std::size_t d, std::uint64_t seed) {
  lane::Rng rng(seed);
  return random_matrix(m, d, rng);
}

}  // namespace oracle
