#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lula/numerics.hpp"

namespace lula {

/// Mean over rows of the largest class probability. Rows must lie on the simplex
/// within 1e-6.
double mmc(const Matrix& probs);

/// Row-wise maximum probability.
Vector max_confidence(const Matrix& probs);

/// Area under the ROC curve with in-distribution points as positives and the
/// confidence as score: P(in > out) + 0.5 * P(in == out), computed from exact
/// integer pair counts.
double auroc(const std::vector<double>& in_conf, const std::vector<double>& out_conf);

/// Mean over rows of sum_c (p_c - [y == c])^2.
double brier(const Matrix& probs, const std::vector<int>& labels);

struct EvalEntry {
  std::string name;
  double mmc = 0.0;
  /// Only for outlier sets, paired with the in-distribution test set.
  std::optional<double> aur;
  /// Only for labeled sets.
  std::optional<double> brier;
  std::vector<double> confidences;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
};

}  // namespace lula
