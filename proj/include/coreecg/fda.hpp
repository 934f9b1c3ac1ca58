#pragma once

// Frequency dynamic augmentation. A learnable C x K weight matrix W maps
// through a sigmoid to an importance map A. Bins at or above the per-lead
// 50th percentile of A are left untouched by noise; the rest receive
// zero-mean Gaussian noise scaled inversely to their importance, normalized
// per lead to unit mean. The spectrum is modulated by (A + lambda .* Z) —
// a real factor applied to both quadratures, so phase is preserved up to
// sign. Gate outcomes and the lambda .* Z term are constants in backward;
// gradients reach W only through A.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "coreecg/ops.hpp"
#include "coreecg/rng.hpp"

namespace coreecg {

template <typename T>
struct FrequencyImportance {
  Tensor<T> W;  // [C, K], K = floor(T/2)+1
  double epsilon = 1e-6;
  double quantile_q = 0.5;
};

// A = sigmoid(W), differentiable w.r.t. W when W is recorded.
template <typename T>
Tensor<T> importance_map(const FrequencyImportance<T>& fi) {
  return sigmoid(fi.W);
}

// Nearest-rank-lower percentile per lead row: sorted index ceil(q*K)-1.
// The DC bin participates like any other.
inline std::vector<double> per_lead_threshold(const std::vector<double>& a, std::size_t C,
                                              std::size_t K, double q = 0.5) {
  if (K < 1 || a.size() != C * K) throw ShapeError("per_lead_threshold: bad A dimensions");
  const auto rank =
      static_cast<std::size_t>(std::ceil(q * static_cast<double>(K))) - (q > 0 ? 1 : 0);
  std::vector<double> theta(C);
  std::vector<double> row(K);
  for (std::size_t c = 0; c < C; ++c) {
    std::copy(a.begin() + c * K, a.begin() + (c + 1) * K, row.begin());
    std::sort(row.begin(), row.end());
    theta[c] = row[std::min(rank, K - 1)];
  }
  return theta;
}

struct NoiseScale {
  std::vector<double> lambda;  // [C, K], zero where A >= theta
  std::vector<double> theta;   // [C]
};

// lambda[c,k] = 0 if A >= theta_c, else 1/(eps + A); nonzero entries of each
// lead are then divided by their mean. A fully gated row stays all-zero.
inline NoiseScale noise_scale(const std::vector<double>& a, std::size_t C, std::size_t K,
                              const std::vector<double>& theta, double eps) {
  if (eps <= 0) throw ConfigError("noise_scale: epsilon must be positive");
  if (a.size() != C * K || theta.size() != C)
    throw ShapeError("noise_scale: dimension mismatch");
  NoiseScale out;
  out.theta = theta;
  out.lambda.assign(C * K, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0;
    std::size_t nz = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[c * K + k];
      if (av >= theta[c]) continue;
      const double l = 1.0 / (eps + av);
      out.lambda[c * K + k] = l;
      sum += l;
      ++nz;
    }
    if (nz == 0) continue;
    const double inv_mean = static_cast<double>(nz) / sum;
    for (std::size_t k = 0; k < K; ++k) out.lambda[c * K + k] *= inv_mean;
  }
  return out;
}

// One augmentation draw: gating, lambda and the sampled noise term are fixed,
// so backward treats them as constants while A stays live.
struct FdaNoise {
  std::size_t C = 0, K = 0;
  std::vector<double> lambda;  // normalized scale, zero at gated bins
  std::vector<double> z;       // N(0,1) draws, row-major per lead
  std::vector<double> noise;   // lambda .* z
  std::vector<double> theta;   // per-lead gate
};

template <typename T>
FdaNoise compute_fda_noise(const Tensor<T>& w, double eps, std::uint64_t seed,
                           double q = 0.5) {
  if (w.rank() != 2) throw ShapeError("fda: W must be [C,K], got " + shape_str(w.shape));
  const std::size_t C = w.shape[0], K = w.shape[1];
  std::vector<double> a(C * K);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(w.ptr()[i])));
  FdaNoise out;
  out.C = C;
  out.K = K;
  out.theta = per_lead_threshold(a, C, K, q);
  auto scale = noise_scale(a, C, K, out.theta, eps);
  out.lambda = std::move(scale.lambda);
  out.z.resize(C * K);
  Rng rng(derive_seed(seed, "fda"));
  for (auto& v : out.z) v = rng.normal();
  out.noise.resize(C * K);
  for (std::size_t i = 0; i < C * K; ++i) out.noise[i] = out.lambda[i] * out.z[i];
  return out;
}

// Spectrum form: spec is rfft(x) [C,K,2]; the signal spectrum of one record
// is constant across epochs, so trainers precompute and reuse it.
template <typename T>
Tensor<T> fda_augment_spec(const Tensor<T>& spec, std::size_t t_len,
                           const FrequencyImportance<T>& fi, const FdaNoise& noise,
                           std::size_t patch_len) {
  if (spec.rank() != 3 || spec.shape.back() != 2)
    throw ShapeError("fda_augment: expected [C,K,2] spectrum, got " + shape_str(spec.shape));
  const std::size_t C = spec.shape[0];
  const std::size_t K = fftcore::rfft_bins(t_len);
  if (spec.shape[1] != K) throw ShapeError("fda_augment: spectrum bins do not match T");
  if (fi.W.shape != Shape{C, K})
    throw ShapeError("fda_augment: W " + shape_str(fi.W.shape) + " does not match signal [C=" +
                     std::to_string(C) + ", K=" + std::to_string(K) + "]");
  if (noise.C != C || noise.K != K) throw ShapeError("fda_augment: noise dims mismatch");
  if (patch_len == 0 || t_len % patch_len != 0)
    throw ShapeError("fda_augment: T=" + std::to_string(t_len) + " not divisible by P=" +
                     std::to_string(patch_len));

  Tensor<T> a = sigmoid(fi.W);
  std::vector<T> noise_vals(C * K);
  for (std::size_t i = 0; i < noise_vals.size(); ++i)
    noise_vals[i] = static_cast<T>(noise.noise[i]);
  Tensor<T> modulation = add(a, Tensor<T>::constant({C, K}, std::move(noise_vals)));
  Tensor<T> mod = mul(spec, reshape(modulation, {C, K, 1}));  // phase-preserving
  Tensor<T> sig = irfft(mod, t_len);                          // [C, T]
  return reshape(sig, {C, t_len / patch_len, patch_len});
}

// x [C,T] -> augmented patches [C, N, P] via X^f .* (A + lambda .* Z).
template <typename T>
Tensor<T> fda_augment(const Tensor<T>& x, const FrequencyImportance<T>& fi,
                      const FdaNoise& noise, std::size_t patch_len) {
  if (x.rank() != 2) throw ShapeError("fda_augment: x must be [C,T], got " + shape_str(x.shape));
  return fda_augment_spec(rfft(x), x.shape[1], fi, noise, patch_len);
}

template <typename T>
Tensor<T> fda_augment(const Tensor<T>& x, const FrequencyImportance<T>& fi, std::uint64_t seed,
                      std::size_t patch_len) {
  return fda_augment(x, fi, compute_fda_noise(fi.W, fi.epsilon, seed, fi.quantile_q), patch_len);
}

}  // namespace coreecg
