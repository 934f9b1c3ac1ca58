#include "coreecg/stdm.hpp"

#include <algorithm>

#include "coreecg/rng.hpp"

namespace coreecg {

namespace {
std::size_t count_ones(const std::vector<std::uint8_t>& v) {
  std::size_t n = 0;
  for (auto x : v) n += x;
  return n;
}
}  // namespace

std::size_t MaskPlan::count_visible() const { return count_ones(V); }
std::size_t MaskPlan::count_masked() const { return count_ones(M); }
std::size_t MaskPlan::count_dropped() const { return count_ones(D); }

std::vector<std::pair<std::size_t, std::size_t>> MaskPlan::visible_pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n)
      if (V[at(c, n)]) out.emplace_back(c, n);
  return out;
}

MaskPlan sample_mask(std::size_t C, std::size_t N, double p_time, double p_lead, std::size_t k,
                     std::uint64_t seed) {
  if (p_time < 0 || p_time > 1) throw ConfigError("sample_mask: p_time must be in [0,1]");
  if (p_lead < 0 || p_lead > 1) throw ConfigError("sample_mask: p_lead must be in [0,1]");
  if (k < 1 || k > C) throw ConfigError("sample_mask: k must be in [1,C]");

  MaskPlan plan;
  plan.C = C;
  plan.N = N;
  plan.p_time = p_time;
  plan.p_lead = p_lead;
  plan.k = k;
  plan.seed = seed;
  plan.V.assign(C * N, 0);
  plan.M.assign(C * N, 0);
  plan.D.assign(C * N, 0);

  Rng rng(derive_seed(seed, "stdm"));
  std::vector<std::uint8_t> vis_col(C);
  for (std::size_t n = 0; n < N; ++n) {
    const bool full_temporal = rng.bernoulli(p_time);
    if (full_temporal) {
      for (std::size_t c = 0; c < C; ++c) plan.M[plan.at(c, n)] = 1;
      continue;
    }
    std::fill(vis_col.begin(), vis_col.end(), 0);
    for (auto c : rng.k_subset(C, k)) vis_col[c] = 1;
    for (std::size_t c = 0; c < C; ++c) {
      if (vis_col[c]) {
        plan.V[plan.at(c, n)] = 1;
      } else if (rng.bernoulli(p_lead)) {
        plan.D[plan.at(c, n)] = 1;
      } else {
        plan.M[plan.at(c, n)] = 1;
      }
    }
  }
  return plan;
}

MaskPlan uniform_random_mask(std::size_t C, std::size_t N, double mask_ratio,
                             std::uint64_t seed) {
  if (mask_ratio < 0 || mask_ratio > 1)
    throw ConfigError("uniform_random_mask: ratio must be in [0,1]");
  MaskPlan plan;
  plan.C = C;
  plan.N = N;
  plan.p_time = mask_ratio;
  plan.k = 0;
  plan.seed = seed;
  plan.V.assign(C * N, 0);
  plan.M.assign(C * N, 0);
  plan.D.assign(C * N, 0);
  Rng rng(derive_seed(seed, "uniform_mask"));
  for (std::size_t i = 0; i < C * N; ++i) {
    if (rng.bernoulli(mask_ratio))
      plan.M[i] = 1;
    else
      plan.V[i] = 1;
  }
  return plan;
}

MaskedPatches apply_mask(const std::vector<float>& x, std::size_t C, std::size_t N, std::size_t P,
                         const MaskPlan& plan) {
  if (plan.C != C || plan.N != N)
    throw ShapeError("apply_mask: plan " + std::to_string(plan.C) + "x" + std::to_string(plan.N) +
                     " vs patches " + std::to_string(C) + "x" + std::to_string(N));
  if (x.size() != C * N * P)
    throw ShapeError("apply_mask: buffer size " + std::to_string(x.size()) + " != C*N*P");
  MaskedPatches out;
  out.x_v.assign(x.size(), 0.0f);
  out.x_m.assign(x.size(), 0.0f);
  out.x_d.assign(x.size(), 0.0f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t cell = plan.at(c, n);
      const std::size_t off = cell * P;
      std::vector<float>* dst = nullptr;
      if (plan.V[cell]) dst = &out.x_v;
      else if (plan.M[cell]) dst = &out.x_m;
      else dst = &out.x_d;
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                x.begin() + static_cast<std::ptrdiff_t>(off + P),
                dst->begin() + static_cast<std::ptrdiff_t>(off));
    }
  return out;
}

}  // namespace coreecg
