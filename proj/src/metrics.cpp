#include "coreecg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coreecg {

double auroc_rank(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores vs labels size");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tie groups, ranks are 1-based
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t q = i; q <= j; ++q) rank[order[q]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0;
  for (std::size_t q = 0; q < n; ++q)
    if (labels[q]) rank_sum_pos += rank[q];
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricsReport compute_metrics(const std::vector<double>& probs, std::size_t n,
                              std::size_t n_classes, const std::vector<int>& labels_single,
                              const std::vector<std::uint8_t>& labels_multi, bool multilabel,
                              double threshold) {
  if (n == 0 || n_classes == 0) throw DataError("compute_metrics: empty input");
  if (probs.size() != n * n_classes) throw ShapeError("compute_metrics: probs size");
  if (multilabel) {
    if (labels_multi.size() != n * n_classes)
      throw ShapeError("compute_metrics: multi-hot label size");
  } else if (labels_single.size() != n) {
    throw ShapeError("compute_metrics: label count");
  }

  // binary decisions: argmax one-hot for single-label, thresholded otherwise
  std::vector<std::uint8_t> pred(n * n_classes, 0);
  std::vector<std::uint8_t> truth(n * n_classes, 0);
  if (multilabel) {
    truth = labels_multi;
    for (std::size_t i = 0; i < n * n_classes; ++i) pred[i] = probs[i] >= threshold ? 1 : 0;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < n_classes; ++c)
        if (probs[i * n_classes + c] > probs[i * n_classes + arg]) arg = c;
      pred[i * n_classes + arg] = 1;
      const int l = labels_single[i];
      if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
        throw DataError("compute_metrics: label out of range");
      truth[i * n_classes + static_cast<std::size_t>(l)] = 1;
    }
  }

  MetricsReport rep;
  if (multilabel) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n * n_classes; ++i) hits += pred[i] == truth[i] ? 1 : 0;
    rep.acc = static_cast<double>(hits) / static_cast<double>(n * n_classes);
  } else {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < n_classes; ++c)
        if (probs[i * n_classes + c] > probs[i * n_classes + arg]) arg = c;
      hits += arg == static_cast<std::size_t>(labels_single[i]) ? 1 : 0;
    }
    rep.acc = static_cast<double>(hits) / static_cast<double>(n);
  }

  double f1_sum = 0;
  std::size_t f1_classes = 0;
  double auc_sum = 0;
  std::size_t auc_classes = 0;
  std::vector<double> col_scores(n);
  std::vector<std::uint8_t> col_labels(n);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i * n_classes + c] != 0;
      const bool t = truth[i * n_classes + c] != 0;
      tp += (p && t) ? 1 : 0;
      fp += (p && !t) ? 1 : 0;
      fn += (!p && t) ? 1 : 0;
      col_scores[i] = probs[i * n_classes + c];
      col_labels[i] = t ? 1 : 0;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom > 0) {
      f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
      ++f1_classes;
    }
    const double auc = auroc_rank(col_scores, col_labels);
    if (!std::isnan(auc)) {
      auc_sum += auc;
      ++auc_classes;
    }
  }
  rep.macro_f1 = f1_classes ? f1_sum / static_cast<double>(f1_classes) : 0.0;
  rep.macro_auroc = auc_classes ? auc_sum / static_cast<double>(auc_classes) : 0.0;
  return rep;
}

}  // namespace coreecg
