#pragma once

// Evaluation metrics: sample-level accuracy (single-label) or micro label
// accuracy (multi-label), macro F1 at a fixed 0.5 threshold, and macro AUROC
// via the rank statistic with average ranks for ties. Classes with no
// positives or no negatives are excluded from the AUROC macro average.

#include <cstdint>
#include <vector>

#include "coreecg/common.hpp"

namespace coreecg {

struct MetricsReport {
  double acc = 0.0;
  double macro_f1 = 0.0;
  double macro_auroc = 0.0;
};

// Mann-Whitney AUROC with average ranks; returns NaN when the class has no
// positives or no negatives.
double auroc_rank(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

// probs: row-major [n, n_classes] in [0,1].
// Single-label: labels_single[i] in [0, n_classes); labels_multi ignored.
// Multi-label: labels_multi is the [n, n_classes] multi-hot matrix.
MetricsReport compute_metrics(const std::vector<double>& probs, std::size_t n,
                              std::size_t n_classes, const std::vector<int>& labels_single,
                              const std::vector<std::uint8_t>& labels_multi, bool multilabel,
                              double threshold = 0.5);

}  // namespace coreecg
