#pragma once

// Spatio-temporal dual masking: per time column, either the whole column is
// masked (full temporal mode), or k leads stay visible and each remaining
// lead is independently dropped from supervision. V, M, D partition the C x N
// patch grid.

#include <cstdint>
#include <vector>

#include "coreecg/common.hpp"

namespace coreecg {

struct MaskPlan {
  std::size_t C = 0;
  std::size_t N = 0;
  // Row-major C x N, entries in {0,1}; V + M + D == 1 elementwise.
  std::vector<std::uint8_t> V, M, D;
  double p_time = 0.0;
  double p_lead = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;

  std::size_t at(std::size_t c, std::size_t n) const { return c * N + n; }
  std::size_t count_visible() const;
  std::size_t count_masked() const;
  std::size_t count_dropped() const;

  // Visible (lead, patch) pairs in lead-major token order.
  std::vector<std::pair<std::size_t, std::size_t>> visible_pairs() const;
};

// Hierarchical sampling: delta_n ~ Bernoulli(p_time) selects full temporal
// mask; otherwise a uniform k-subset of leads stays visible and each
// remaining lead is dropped with probability p_lead, masked otherwise.
MaskPlan sample_mask(std::size_t C, std::size_t N, double p_time, double p_lead, std::size_t k,
                     std::uint64_t seed);

// Ablation baseline: i.i.d. masking at the given ratio, no dropped set.
MaskPlan uniform_random_mask(std::size_t C, std::size_t N, double mask_ratio, std::uint64_t seed);

// Element-wise masking of a C x N x P patch buffer into the three streams.
struct MaskedPatches {
  std::vector<float> x_v, x_m, x_d;  // each C*N*P, non-selected patches zeroed
};
MaskedPatches apply_mask(const std::vector<float>& x, std::size_t C, std::size_t N, std::size_t P,
                         const MaskPlan& plan);

}  // namespace coreecg
