#include <limits>

#include "helpers.hpp"
#include "lula/error.hpp"

using namespace lula;
using testing::random_matrix;
using testing::random_net;

namespace {

// Hand-written data term for each likelihood.
double reference_nll(const Matrix& out, const Dataset& data, const LossKind& loss) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (loss.kind == LossKind::Kind::gaussian_nll) {
      total += 0.5 * loss.noise_precision * (out.row(i) - data.targets.row(i)).squaredNorm();
    } else if (loss.kind == LossKind::Kind::binary_ce) {
      const double p = testing::sigmoid(out(i, 0));
      total -= data.labels[static_cast<std::size_t>(i)] == 1 ? std::log(p) : std::log(1.0 - p);
    } else {
      double z = 0.0;
      for (Eigen::Index c = 0; c < out.cols(); ++c) z += std::exp(out(i, c));
      total -= out(i, data.labels[static_cast<std::size_t>(i)]) - std::log(z);
    }
  }
  return total;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("map_loss examples") {
  // Perfect fit, lambda 0, beta 1.
  Matrix w(1, 1);
  w << 2;
  const Network line({Layer{w, Vector::Zero(1), Activation::identity}});
  Matrix x(3, 1);
  x << -1, 0.5, 2;
  const Dataset fit = testing::regression_set(x, 2.0 * x);
  CHECK(map_loss(line, fit, LossKind::gaussian(1.0), 0.0).value == 0.0);

  // binary_ce at logit 0: log 2 per point.
  const Network zero({Layer{Matrix::Zero(1, 2), Vector::Zero(1), Activation::identity}});
  const Dataset bin = testing::classification_set(Matrix::Ones(4, 2), {0, 1, 1, 0}, 2);
  CHECK(map_loss(zero, bin, LossKind::binary(), 0.0).value == doctest::Approx(4.0 * std::log(2.0)));

  // lambda 2, ||theta||^2 = 3, zero data term.
  Matrix w2(1, 2);
  w2 << 1, 1;
  const Network reg({Layer{w2, Vector::Ones(1), Activation::identity}});
  const Dataset origin = testing::regression_set(Matrix::Zero(1, 2), Matrix::Ones(1, 1));
  CHECK(map_loss(reg, origin, LossKind::gaussian(1.0), 2.0).value == doctest::Approx(3.0));
}

TEST_CASE("map_loss value and gradient against independent oracles") {
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    const int kind = t % 3;
    const auto dims = testing::random_dims(rng, 3, 6, 3, 3);
    std::vector<Eigen::Index> d = dims;
    LossKind loss;
    Dataset data;
    const Matrix x = random_matrix(rng, 5, d.front());
    if (kind == 0) {
      loss = LossKind::gaussian(0.5 + rng.uniform());
      data = testing::regression_set(x, random_matrix(rng, 5, d.back()));
    } else if (kind == 1) {
      d.back() = 3;
      loss = LossKind::categorical();
      std::vector<int> labels;
      for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.below(3)));
      data = testing::classification_set(x, labels, 3);
    } else {
      d.back() = 1;
      loss = LossKind::binary();
      std::vector<int> labels;
      for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.below(2)));
      data = testing::classification_set(x, labels, 2);
    }
    const Network net = random_net(rng, d, Activation::tanh);
    const double lambda = rng.uniform(0.0, 2.0);
    const LossResult r = map_loss(net, data, loss, lambda);
    auto objective = [&](const Vector& theta) {
      Network probe = net;
      probe.unflatten(theta);
      return reference_nll(predict(probe, data.features), data, loss) + 0.5 * lambda * theta.squaredNorm();
    };
    CHECK(r.value == doctest::Approx(objective(net.flatten())).epsilon(1e-12));
    const Vector fd = testing::central_difference(objective, net.flatten(), 1e-5);
    CHECK(testing::rel_err(r.gradient, fd) < 1e-5);
  }
}

TEST_CASE("categorical cross entropy by hand") {
  Matrix logits(1, 3);
  logits << 1, 2, 3;
  const Dataset data = testing::classification_set(Matrix::Zero(1, 1), {2}, 3);
  const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  CHECK(nll_and_output_grad(logits, data, {0}, LossKind::categorical(), nullptr) ==
        doctest::Approx(expected));
}

TEST_CASE("output hessians") {
  Vector logits(3);
  logits << 0.2, -1.0, 0.7;
  const Vector p = softmax_rows(logits.transpose()).row(0).transpose();
  const Matrix expected = Matrix(p.asDiagonal()) - p * p.transpose();
  CHECK((output_hessian(LossKind::categorical(), logits) - expected).cwiseAbs().maxCoeff() < 1e-15);
  Vector z(1);
  z << 0.0;
  CHECK(output_hessian(LossKind::binary(), z)(0, 0) == 0.25);
  z << 1.3;
  const double s = testing::sigmoid(1.3);
  CHECK(output_hessian(LossKind::binary(), z)(0, 0) == doctest::Approx(s * (1 - s)));
  CHECK(output_hessian(LossKind::gaussian(3.0), Vector::Zero(2)) == 3.0 * Matrix::Identity(2, 2));
}

TEST_CASE("map_loss rejects empty batches and non-finite losses") {
  Rng rng(2);
  Network net = random_net(rng, {2, 3, 1}, Activation::relu);
  const Dataset empty = testing::regression_set(Matrix::Zero(0, 2), Matrix::Zero(0, 1));
  CHECK_THROWS_AS(map_loss(net, empty, LossKind::gaussian(1.0), 0.0), InvalidArgument);
  net.mutable_layers()[1].bias(0) = std::numeric_limits<double>::infinity();
  const Dataset one = testing::regression_set(Matrix::Ones(1, 2), Matrix::Zero(1, 1));
  CHECK_THROWS_AS(map_loss(net, one, LossKind::gaussian(1.0), 0.0), NumericError);
}

TEST_CASE("optimizer steps") {
  Vector p(2);
  p << 1.0, -1.0;
  Vector g(2);
  g << 0.5, -2.0;
  Vector sgd = p;
  FirstOrderOptimizer(TrainConfig::Optimizer::sgd, 0.1).step(sgd, g);
  CHECK(sgd(0) == doctest::Approx(0.95));
  CHECK(sgd(1) == doctest::Approx(-0.8));
  // First Adam step moves every coordinate by lr * g / (|g| + eps).
  Vector adam = p;
  FirstOrderOptimizer(TrainConfig::Optimizer::adam, 0.01).step(adam, g);
  CHECK(adam(0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(adam(1) == doctest::Approx(-0.99).epsilon(1e-6));
}

TEST_CASE("init_network scales") {
  Rng rng(3);
  const Network net = init_network({400, 300, 2}, Activation::relu, rng);
  const Matrix& w = net.layer(0).weight;
  const double var = w.array().square().mean();
  CHECK(var == doctest::Approx(2.0 / 400.0).epsilon(0.03));
  CHECK(net.layer(0).bias == Vector::Zero(300));
  CHECK(net.layer(1).activation == Activation::identity);
  const Network t = init_network({400, 300, 2}, Activation::tanh, rng);
  CHECK(t.layer(0).weight.array().square().mean() == doctest::Approx(1.0 / 400.0).epsilon(0.03));
}

TEST_CASE("linear regression recovers the slope") {
  Rng rng(4);
  Matrix x(100, 1);
  for (Eigen::Index i = 0; i < 100; ++i) x(i, 0) = rng.uniform(-1.0, 1.0);
  const Dataset data = testing::regression_set(x, 2.0 * x);
  const Network init = init_network({1, 1}, Activation::identity, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 200;
  cfg.batch_size = 16;
  const TrainResult r = train_map(init, data, LossKind::gaussian(1.0), cfg);
  CHECK(std::abs(r.net.layer(0).weight(0, 0) - 2.0) < 0.05);
  CHECK(r.history.size() == 200);
}

TEST_CASE("two moons 2-64-64-2 reaches high train accuracy") {
  const Dataset data = gen_two_moons(300, 0.1, 5);
  Rng rng(5);
  const Network init = init_network({2, 64, 64, 2}, Activation::relu, rng);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.weight_decay = 0.1;
  const TrainResult r = train_map(init, data, LossKind::categorical(), cfg);
  CHECK(accuracy(r.net, data) >= 0.95);
}

TEST_CASE("training is deterministic and zero epochs is a no-op") {
  const Dataset data = gen_two_moons(60, 0.1, 6);
  Rng rng(6);
  const Network init = init_network({2, 8, 2}, Activation::relu, rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  const TrainResult a = train_map(init, data, LossKind::categorical(), cfg);
  const TrainResult b = train_map(init, data, LossKind::categorical(), cfg);
  CHECK(a.net.flatten() == b.net.flatten());
  CHECK(a.history == b.history);
  cfg.epochs = 0;
  const TrainResult none = train_map(init, data, LossKind::categorical(), cfg);
  CHECK(none.net.flatten() == init.flatten());
  CHECK(none.history.empty());
}

TEST_CASE("larger prior precision never grows the solution norm") {
  Rng data_rng(7);
  Matrix x(50, 1);
  for (Eigen::Index i = 0; i < 50; ++i) x(i, 0) = data_rng.uniform(-1.0, 1.0);
  const Dataset data = testing::regression_set(x, 3.0 * x + Matrix::Constant(50, 1, 1.0));
  Rng rng(7);
  const Network init = init_network({1, 1}, Activation::identity, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 300;
    cfg.batch_size = 50;
    cfg.weight_decay = lambda;
    const double norm = train_map(init, data, LossKind::gaussian(1.0), cfg).net.flatten().norm();
    CHECK(norm <= previous + 1e-9);
    previous = norm;
  }
}

TEST_CASE("compatibility checks") {
  Rng rng(8);
  const Network net = random_net(rng, {2, 3, 2}, Activation::relu);
  const Dataset wrong_dim = testing::classification_set(Matrix::Zero(2, 3), {0, 1}, 2);
  CHECK_THROWS_AS(check_compatible(net, wrong_dim, LossKind::categorical()), DimensionMismatch);
  const Dataset wrong_classes = testing::classification_set(Matrix::Zero(2, 2), {0, 1}, 3);
  CHECK_THROWS_AS(check_compatible(net, wrong_classes, LossKind::categorical()), DimensionMismatch);
  const Dataset reg = testing::regression_set(Matrix::Zero(2, 2), Matrix::Zero(2, 2));
  CHECK_THROWS_AS(map_loss(net, reg, LossKind::gaussian(0.0), 0.0), InvalidArgument);
}

}  // TEST_SUITE
