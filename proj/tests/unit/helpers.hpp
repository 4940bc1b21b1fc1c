#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "lula/data.hpp"
#include "lula/laplace.hpp"
#include "lula/lula.hpp"
#include "lula/metrics.hpp"
#include "lula/network.hpp"
#include "lula/numerics.hpp"
#include "lula/training.hpp"

namespace testing {

using lula::Matrix;
using lula::Vector;

inline Matrix random_matrix(lula::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline lula::Network random_net(lula::Rng& rng, const std::vector<Eigen::Index>& dims,
                                lula::Activation hidden, double bias_scale = 0.3) {
  std::vector<lula::Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    lula::Layer layer;
    layer.weight = random_matrix(rng, dims[l + 1], dims[l], 1.0 / std::sqrt(static_cast<double>(dims[l])));
    layer.bias = random_matrix(rng, dims[l + 1], 1, bias_scale).col(0);
    layer.activation = l + 2 == dims.size() ? lula::Activation::identity : hidden;
    layers.push_back(std::move(layer));
  }
  return lula::Network(std::move(layers));
}

inline std::vector<Eigen::Index> random_dims(lula::Rng& rng, int max_layers, int max_units, int max_in = 4,
                                             int max_out = 3) {
  const int depth = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_layers)));
  std::vector<Eigen::Index> dims{1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_in)))};
  for (int l = 1; l < depth; ++l) {
    dims.push_back(1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_units))));
  }
  dims.push_back(1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_out))));
  return dims;
}

inline lula::Activation random_activation(lula::Rng& rng) {
  static const lula::Activation acts[] = {lula::Activation::relu, lula::Activation::selu,
                                          lula::Activation::tanh, lula::Activation::identity};
  return acts[rng.below(4)];
}

/// ||a - b|| / max(||b||, floor)
inline double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                                 double eps) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x;
    Vector down = x;
    up(i) += eps;
    down(i) -= eps;
    g(i) = (f(up) - f(down)) / (2.0 * eps);
  }
  return g;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline lula::Dataset regression_set(const Matrix& x, const Matrix& y) {
  lula::Dataset d;
  d.features = x;
  d.targets = y;
  d.task = lula::Task::regression;
  return d;
}

inline lula::Dataset classification_set(const Matrix& x, std::vector<int> labels, int classes) {
  lula::Dataset d;
  d.features = x;
  d.labels = std::move(labels);
  d.num_classes = classes;
  d.task = lula::Task::classification;
  return d;
}

}  // namespace testing
