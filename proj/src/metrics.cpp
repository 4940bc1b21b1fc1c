#include "lula/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "lula/error.hpp"

namespace lula {
namespace {

void check_simplex(const Matrix& probs) {
  if (probs.rows() == 0) throw InvalidArgument("metrics: empty probability batch");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6 || probs.row(i).minCoeff() < -1e-12) {
      throw InvalidArgument("metrics: row " + std::to_string(i) + " is not a probability vector");
    }
  }
}

}  // namespace

Vector max_confidence(const Matrix& probs) {
  check_simplex(probs);
  return probs.rowwise().maxCoeff();
}

// Running mean: exact when every row has the same maximum.
double mmc(const Matrix& probs) {
  const Vector conf = max_confidence(probs);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < conf.size(); ++i) mean += (conf(i) - mean) / static_cast<double>(i + 1);
  return mean;
}

double auroc(const std::vector<double>& in_conf, const std::vector<double>& out_conf) {
  if (in_conf.empty() || out_conf.empty()) throw InvalidArgument("auroc: empty confidence vector");
  std::vector<double> in_sorted = in_conf;
  std::vector<double> out_sorted = out_conf;
  std::sort(in_sorted.begin(), in_sorted.end());
  std::sort(out_sorted.begin(), out_sorted.end());
  // For each in-score count outliers strictly below (2 credits) and equal (1 credit).
  std::uint64_t credit = 0;
  std::size_t below = 0;
  std::size_t upto = 0;
  for (double s : in_sorted) {
    while (below < out_sorted.size() && out_sorted[below] < s) ++below;
    if (upto < below) upto = below;
    while (upto < out_sorted.size() && out_sorted[upto] <= s) ++upto;
    credit += 2 * below + (upto - below);
  }
  const std::uint64_t pairs = 2 * static_cast<std::uint64_t>(in_conf.size()) * out_conf.size();
  return static_cast<double>(credit) / static_cast<double>(pairs);
}

double brier(const Matrix& probs, const std::vector<int>& labels) {
  check_simplex(probs);
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw DimensionMismatch("brier: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(probs.rows()) + " rows");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw InvalidArgument("brier: label out of range");
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double d = probs(i, c) - (c == y ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(probs.rows());
}

}  // namespace lula
