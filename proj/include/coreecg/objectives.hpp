#pragma once

// Pretraining losses (masked reconstruction + InfoNCE) in graph form, with
// plain double-precision evaluators used as independent oracles in tests,
// plus the fine-tuning classification losses.

#include <cmath>
#include <cstdint>
#include <vector>

#include "coreecg/ops.hpp"
#include "coreecg/stdm.hpp"

namespace coreecg {

struct LossReport {
  double l_rec = 0.0;
  double l_con = 0.0;
  double total = 0.0;
  std::size_t masked_count = 0;
  std::size_t batch_size = 0;
};

inline double total_loss(double l_rec, double l_con, double alpha, double beta) {
  return alpha * l_rec + beta * l_con;
}

// ---- masked reconstruction ---------------------------------------------------

// Sum of squared residuals over masked patches; the [C,N,1] mask broadcasts
// across P, so values at visible/dropped positions multiply by exactly zero.
template <typename T>
Tensor<T> masked_sse(const Tensor<T>& x, const Tensor<T>& xhat, const MaskPlan& plan) {
  if (x.shape != xhat.shape || x.rank() != 3)
    throw ShapeError("masked_sse: x " + shape_str(x.shape) + " vs xhat " +
                     shape_str(xhat.shape));
  if (plan.C != x.shape[0] || plan.N != x.shape[1])
    throw ShapeError("masked_sse: plan dims do not match patches");
  std::vector<T> mask(plan.C * plan.N);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<T>(plan.M[i]);
  auto mask_t = Tensor<T>::constant({plan.C, plan.N, 1}, std::move(mask));
  auto diff = add(x, scale(xhat, -1.0));
  return sum_all(mul(mul(diff, diff), mask_t));
}

// L_rec = (1/|M|) * ||(x - xhat) .* M||_F^2 with |M| = masked patch count.
template <typename T>
Tensor<T> reconstruction_loss_graph(const Tensor<T>& x, const Tensor<T>& xhat,
                                    const MaskPlan& plan) {
  const std::size_t m = plan.count_masked();
  if (m == 0) throw NumericError("reconstruction_loss: empty mask (|M| = 0)");
  return scale(masked_sse(x, xhat, plan), 1.0 / static_cast<double>(m));
}

// Plain evaluator, independent of the graph path.
template <typename T>
double reconstruction_loss(const T* x, const T* xhat, std::size_t C, std::size_t N,
                           std::size_t P, const MaskPlan& plan) {
  if (plan.C != C || plan.N != N) throw ShapeError("reconstruction_loss: plan dims");
  const std::size_t m = plan.count_masked();
  if (m == 0) throw NumericError("reconstruction_loss: empty mask (|M| = 0)");
  double acc = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      if (!plan.M[plan.at(c, n)]) continue;
      const std::size_t off = (c * N + n) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double d = static_cast<double>(x[off + i]) - static_cast<double>(xhat[off + i]);
        acc += d * d;
      }
    }
  return acc / static_cast<double>(m);
}

// ---- InfoNCE -------------------------------------------------------------------

// Anchors are student projections; the candidate set is the batch of teacher
// projections, positive on the diagonal.
template <typename T>
Tensor<T> infonce_graph(const Tensor<T>& hs, const Tensor<T>& ht, double tau) {
  if (tau <= 0) throw ConfigError("infonce: tau must be positive");
  if (hs.rank() != 2 || hs.shape != ht.shape)
    throw ShapeError("infonce: expects matching [B,D] inputs, got " + shape_str(hs.shape) +
                     " and " + shape_str(ht.shape));
  const std::size_t b = hs.shape[0];
  auto logp = softmax(scale(cosine_similarity(hs, ht), 1.0 / tau), /*log=*/true);
  std::vector<std::int64_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = static_cast<std::int64_t>(i * b + i);
  auto pos = index_select(reshape(logp, {b * b}), 0, diag);
  return scale(mean_pool(pos), -1.0);
}

// Plain double-precision evaluator.
inline double infonce_loss(const std::vector<double>& hs, const std::vector<double>& ht,
                           std::size_t b, std::size_t d, double tau) {
  if (tau <= 0) throw ConfigError("infonce: tau must be positive");
  if (hs.size() != b * d || ht.size() != b * d) throw ShapeError("infonce: buffer sizes");
  auto norm = [&](const std::vector<double>& v, std::size_t i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += v[i * d + j] * v[i * d + j];
    if (s == 0.0) throw NumericError("infonce: zero-norm embedding");
    return std::sqrt(s);
  };
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> sims(b);
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0;
      for (std::size_t q = 0; q < d; ++q) dot += hs[i * d + q] * ht[j * d + q];
      sims[j] = dot / (norm(hs, i) * norm(ht, j)) / tau;
    }
    double mx = sims[0];
    for (double s : sims) mx = std::max(mx, s);
    double z = 0;
    for (double s : sims) z += std::exp(s - mx);
    loss += -(sims[i] - mx - std::log(z));
  }
  return loss / static_cast<double>(b);
}

// ---- fine-tuning losses -----------------------------------------------------------

// -log softmax(logits)[label]
template <typename T>
Tensor<T> cross_entropy_graph(const Tensor<T>& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: expects rank-1 logits");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.shape[0])
    throw ShapeError("cross_entropy: label out of range");
  auto lp = softmax(logits, /*log=*/true);
  auto pick = index_select(lp, 0, {label});
  return scale(pick, -1.0);
}

// Mean per-class binary cross-entropy. log(sigmoid(z)) and log(1-sigmoid(z))
// come from a paired log-softmax over [z, 0], which keeps the loss inside
// the primitive set and numerically stable.
template <typename T>
Tensor<T> bce_graph(const Tensor<T>& logits, const std::vector<std::uint8_t>& targets) {
  if (logits.rank() != 1 || logits.shape[0] != targets.size())
    throw ShapeError("bce: logits vs targets size mismatch");
  const std::size_t n = targets.size();
  auto z = reshape(logits, {n, 1});
  auto paired = concat<T>({z, Tensor<T>::zeros({n, 1})}, 1);  // [n, 2]
  auto lp = reshape(softmax(paired, /*log=*/true), {2 * n});
  std::vector<std::int64_t> pick(n);
  for (std::size_t c = 0; c < n; ++c)
    pick[c] = static_cast<std::int64_t>(2 * c + (targets[c] ? 0 : 1));
  return scale(mean_pool(index_select(lp, 0, pick)), -1.0);
}

}  // namespace coreecg
