#include "lula/training.hpp"

#include <cmath>
#include <numeric>

#include "lula/error.hpp"

namespace lula {

std::string_view to_string(LossKind::Kind kind) {
  switch (kind) {
    case LossKind::Kind::gaussian_nll: return "gaussian_nll";
    case LossKind::Kind::categorical_ce: return "categorical_ce";
    case LossKind::Kind::binary_ce: return "binary_ce";
  }
  return "gaussian_nll";
}

LossKind::Kind loss_kind_from_string(std::string_view name) {
  if (name == "gaussian_nll" || name == "gaussian") return LossKind::Kind::gaussian_nll;
  if (name == "categorical_ce" || name == "categorical") return LossKind::Kind::categorical_ce;
  if (name == "binary_ce" || name == "binary") return LossKind::Kind::binary_ce;
  throw InvalidArgument("unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(TrainConfig::Optimizer opt) {
  return opt == TrainConfig::Optimizer::sgd ? "sgd" : "adam";
}

TrainConfig::Optimizer optimizer_from_string(std::string_view name) {
  if (name == "sgd") return TrainConfig::Optimizer::sgd;
  if (name == "adam") return TrainConfig::Optimizer::adam;
  throw InvalidArgument("unknown optimizer '" + std::string(name) + "'");
}

void check_compatible(const Network& net, const Dataset& data, const LossKind& loss) {
  if (data.dim() != net.input_dim()) {
    throw DimensionMismatch("dataset has " + std::to_string(data.dim()) +
                            " features, network expects " + std::to_string(net.input_dim()));
  }
  switch (loss.kind) {
    case LossKind::Kind::gaussian_nll:
      if (!(loss.noise_precision > 0.0)) throw InvalidArgument("noise precision must be positive");
      if (data.targets.rows() != data.size() || data.targets.cols() != net.output_dim()) {
        throw DimensionMismatch("regression targets must be " + std::to_string(data.size()) +
                                "x" + std::to_string(net.output_dim()));
      }
      break;
    case LossKind::Kind::categorical_ce:
      if (static_cast<Eigen::Index>(data.labels.size()) != data.size()) {
        throw DimensionMismatch("classification data needs one label per row");
      }
      if (data.num_classes != net.output_dim()) {
        throw DimensionMismatch("network has " + std::to_string(net.output_dim()) +
                                " outputs for " + std::to_string(data.num_classes) + " classes");
      }
      break;
    case LossKind::Kind::binary_ce:
      if (static_cast<Eigen::Index>(data.labels.size()) != data.size()) {
        throw DimensionMismatch("classification data needs one label per row");
      }
      if (net.output_dim() != 1 || data.num_classes > 2) {
        throw DimensionMismatch("binary_ce needs a single logit and at most two classes");
      }
      break;
  }
}

double nll_and_output_grad(const Matrix& outputs, const Dataset& data,
                           const std::vector<std::size_t>& rows, const LossKind& loss,
                           Matrix* output_grad) {
  if (output_grad) output_grad->setZero(outputs.rows(), outputs.cols());
  double total = 0.0;
  for (Eigen::Index s = 0; s < outputs.rows(); ++s) {
    const std::size_t r = rows[static_cast<std::size_t>(s)];
    switch (loss.kind) {
      case LossKind::Kind::gaussian_nll: {
        const auto residual = (outputs.row(s) - data.targets.row(static_cast<Eigen::Index>(r))).eval();
        total += 0.5 * loss.noise_precision * residual.squaredNorm();
        if (output_grad) output_grad->row(s) = loss.noise_precision * residual;
        break;
      }
      case LossKind::Kind::categorical_ce: {
        const int y = data.labels[r];
        const double peak = outputs.row(s).maxCoeff();
        const double lse = peak + std::log((outputs.row(s).array() - peak).exp().sum());
        total += lse - outputs(s, y);
        if (output_grad) {
          for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
            (*output_grad)(s, c) = std::exp(outputs(s, c) - lse) - (c == y ? 1.0 : 0.0);
          }
        }
        break;
      }
      case LossKind::Kind::binary_ce: {
        const double f = outputs(s, 0);
        const double y = data.labels[r];
        // -log sigma(f) = softplus(-f), -log(1 - sigma(f)) = softplus(f)
        total += y * softplus(-f) + (1.0 - y) * softplus(f);
        if (output_grad) (*output_grad)(s, 0) = logistic(f) - y;
        break;
      }
    }
  }
  return total;
}

Matrix output_hessian(const LossKind& loss, const Vector& output) {
  switch (loss.kind) {
    case LossKind::Kind::gaussian_nll:
      return loss.noise_precision * Matrix::Identity(output.size(), output.size());
    case LossKind::Kind::categorical_ce: {
      const Vector p = softmax_rows(output.transpose()).row(0).transpose();
      Matrix h = -p * p.transpose();
      h.diagonal() += p;
      return h;
    }
    case LossKind::Kind::binary_ce: {
      const double s = logistic(output(0));
      return Matrix::Constant(1, 1, s * (1.0 - s));
    }
  }
  return {};
}

LossResult map_loss(const Network& net, const Dataset& batch, const LossKind& loss,
                    double prior_precision) {
  if (batch.size() == 0) throw InvalidArgument("map_loss: empty batch");
  if (prior_precision < 0.0) throw InvalidArgument("map_loss: negative prior precision");
  check_compatible(net, batch, loss);
  std::vector<std::size_t> rows(static_cast<std::size_t>(batch.size()));
  std::iota(rows.begin(), rows.end(), 0);
  const ForwardTrace trace = forward(net, batch.features);
  Matrix out_grad;
  const double nll = nll_and_output_grad(trace.output(), batch, rows, loss, &out_grad);
  const Vector theta = net.flatten();
  LossResult result;
  result.value = nll + 0.5 * prior_precision * theta.squaredNorm();
  if (!std::isfinite(result.value)) throw NumericError("map_loss: non-finite loss value");
  result.gradient = backward(net, trace, out_grad).flatten() + prior_precision * theta;
  return result;
}

FirstOrderOptimizer::FirstOrderOptimizer(TrainConfig::Optimizer kind, double learning_rate,
                                         double momentum)
    : kind_(kind), lr_(learning_rate), momentum_(momentum) {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
}

void FirstOrderOptimizer::step(Vector& params, const Vector& grad) {
  if (m_.size() != params.size()) {
    m_ = Vector::Zero(params.size());
    v_ = Vector::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  if (kind_ == TrainConfig::Optimizer::sgd) {
    m_ = momentum_ * m_ + grad;
    params -= lr_ * m_;
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  m_ = beta1 * m_ + (1.0 - beta1) * grad;
  v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    params(i) -= lr_ * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + eps);
  }
}

Network init_network(const std::vector<Eigen::Index>& dims, Activation hidden, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("init_network: need at least input and output dims");
  std::vector<Layer> layers;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    Layer layer;
    layer.activation = (l + 1 == dims.size()) ? Activation::identity : hidden;
    const double gain =
        (hidden == Activation::relu || hidden == Activation::selu) && l + 1 < dims.size() ? 2.0 : 1.0;
    const double sd = std::sqrt(gain / static_cast<double>(dims[l - 1]));
    layer.weight.resize(dims[l], dims[l - 1]);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = sd * rng.normal();
    }
    layer.bias = Vector::Zero(dims[l]);
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers));
}

TrainResult train_map(const Network& net, const Dataset& data, const LossKind& loss,
                      const TrainConfig& config) {
  TrainResult result{net, {}};
  if (config.epochs <= 0) return result;
  if (data.size() == 0) throw InvalidArgument("train_map: empty training set");
  if (config.weight_decay < 0.0) throw InvalidArgument("train_map: negative weight decay");
  check_compatible(net, data, loss);

  const auto m = static_cast<std::size_t>(data.size());
  const std::size_t batch = config.batch_size == 0 ? m : std::min(config.batch_size, m);
  Rng rng(config.seed);
  FirstOrderOptimizer opt(config.optimizer, config.learning_rate, config.momentum);
  Vector theta = result.net.flatten();
  const double decay = config.weight_decay / static_cast<double>(m);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = random_permutation(m, rng);
    double epoch_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < m; begin += batch) {
      const std::size_t end = std::min(m, begin + batch);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      Matrix x(static_cast<Eigen::Index>(rows.size()), data.dim());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(rows[i]));
      }
      const ForwardTrace trace = forward(result.net, x);
      Matrix out_grad;
      const double nll = nll_and_output_grad(trace.output(), data, rows, loss, &out_grad);
      const double scale = 1.0 / static_cast<double>(rows.size());
      const double objective = scale * nll + 0.5 * decay * theta.squaredNorm();
      if (!std::isfinite(objective)) {
        throw NumericError("train_map: loss diverged at epoch " + std::to_string(epoch + 1));
      }
      const Vector grad = scale * backward(result.net, trace, out_grad).flatten() + decay * theta;
      opt.step(theta, grad);
      result.net.unflatten(theta);
      epoch_total += objective;
      ++steps;
    }
    result.history.push_back(epoch_total / static_cast<double>(steps));
  }
  return result;
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0 || data.labels.empty()) throw InvalidArgument("accuracy: needs labeled data");
  const Matrix out = predict(net, data.features);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index pred = 0;
    if (out.cols() == 1) {
      pred = out(i, 0) > 0.0 ? 1 : 0;
    } else {
      out.row(i).maxCoeff(&pred);
    }
    if (pred == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(out.rows());
}

}  // namespace lula
