#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "lula/error.hpp"

using namespace lula;
using testing::random_matrix;
using testing::random_net;

namespace {

// Output-space curvature written out by hand.
Matrix hand_lambda(const LossKind& loss, const Vector& f) {
  if (loss.kind == LossKind::Kind::gaussian_nll) {
    return loss.noise_precision * Matrix::Identity(f.size(), f.size());
  }
  if (loss.kind == LossKind::Kind::binary_ce) {
    const double s = testing::sigmoid(f(0));
    return Matrix::Constant(1, 1, s * (1.0 - s));
  }
  Vector p = (f.array() - f.maxCoeff()).exp();
  p /= p.sum();
  Matrix lam = -p * p.transpose();
  lam.diagonal() += p;
  return lam;
}

// Finite-difference Jacobian of the outputs at x with respect to all parameters.
Matrix fd_param_jacobian(const Network& net, const Vector& x) {
  const Vector theta = net.flatten();
  Matrix jac(net.output_dim(), theta.size());
  const double h = 1e-6;
  for (Eigen::Index p = 0; p < theta.size(); ++p) {
    Network up = net;
    Network down = net;
    Vector tu = theta;
    Vector td = theta;
    tu(p) += h;
    td(p) -= h;
    up.unflatten(tu);
    down.unflatten(td);
    jac.col(p) = (predict(up, x.transpose()).row(0) - predict(down, x.transpose()).row(0)).transpose() / (2 * h);
  }
  return jac;
}

struct Problem {
  Network net;
  Dataset data;
  LossKind loss;
};

Problem random_problem(Rng& rng, int kind, Eigen::Index m) {
  std::vector<Eigen::Index> dims = testing::random_dims(rng, 3, 4, 3, 3);
  Problem p;
  const Matrix x = random_matrix(rng, m, dims.front());
  if (kind == 0) {
    p.loss = LossKind::gaussian(0.5 + rng.uniform());
    p.data = testing::regression_set(x, random_matrix(rng, m, dims.back()));
  } else if (kind == 1) {
    dims.back() = 3;
    p.loss = LossKind::categorical();
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < m; ++i) labels.push_back(static_cast<int>(rng.below(3)));
    p.data = testing::classification_set(x, labels, 3);
  } else {
    dims.back() = 1;
    p.loss = LossKind::binary();
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < m; ++i) labels.push_back(static_cast<int>(rng.below(2)));
    p.data = testing::classification_set(x, labels, 2);
  }
  p.net = random_net(rng, dims, Activation::tanh);
  return p;
}

Matrix sample_covariance(const std::vector<Vector>& draws, const Vector& mean) {
  Matrix cov = Matrix::Zero(mean.size(), mean.size());
  for (const Vector& d : draws) cov += (d - mean) * (d - mean).transpose();
  return cov / static_cast<double>(draws.size());
}

Network scalar_net(double w, double b) {
  Matrix weight(1, 1);
  weight << w;
  Vector bias(1);
  bias << b;
  return Network({Layer{weight, bias, Activation::identity}});
}

}  // namespace

TEST_SUITE("laplace") {

TEST_CASE("last-layer parameter layout") {
  Rng rng(1);
  Network net = random_net(rng, {2, 3, 2}, Activation::relu);
  const Layer& last = net.layer(1);
  const Vector p = last_layer_params(net);
  REQUIRE(p.size() == 8);
  CHECK(p(0) == last.weight(0, 0));
  CHECK(p(2) == last.weight(0, 2));
  CHECK(p(3) == last.bias(0));
  CHECK(p(4) == last.weight(1, 0));
  CHECK(p(7) == last.bias(1));
  Vector q = Vector::LinSpaced(8, 1, 8);
  set_last_layer_params(net, q);
  CHECK(last_layer_params(net) == q);
  CHECK_THROWS_AS(set_last_layer_params(net, Vector::Zero(7)), DimensionMismatch);
  const Matrix feats = last_layer_features(net, Matrix::Ones(4, 2));
  CHECK(feats.cols() == 4);
  CHECK(feats.col(3) == Vector::Ones(4));
}

TEST_CASE("single-point gaussian curvature is the outer product of the augmented input") {
  const Network net = scalar_net(0.7, -0.2);
  Matrix x(1, 1);
  x << 1.5;
  const Dataset data = testing::regression_set(x, Matrix::Constant(1, 1, 0.3));
  const Curvature c = fit_curvature(net, data, LossKind::gaussian(1.0), CurvatureKind::full_ggn, Subset::last_layer);
  Matrix expected(2, 2);
  expected << 2.25, 1.5, 1.5, 1.0;
  CHECK((c.full - expected).cwiseAbs().maxCoeff() < 1e-15);

  // Second differences of the hand-written loss agree.
  auto nll = [&](double w, double b) { return 0.5 * std::pow(w * 1.5 + b - 0.3, 2); };
  const double h = 1e-4;
  const double hww = (nll(0.7 + h, -0.2) - 2 * nll(0.7, -0.2) + nll(0.7 - h, -0.2)) / (h * h);
  CHECK(hww == doctest::Approx(2.25).epsilon(1e-6));
}

TEST_CASE("binary last-layer curvature at logit zero") {
  Matrix w(1, 2);
  w << 0.0, 0.0;
  const Network net({Layer{w, Vector::Zero(1), Activation::identity}});
  Matrix x(1, 2);
  x << 1.0, -2.0;
  const Dataset data = testing::classification_set(x, {1}, 2);
  const Curvature c = fit_curvature(net, data, LossKind::binary(), CurvatureKind::full_ggn, Subset::last_layer);
  Vector hbar(3);
  hbar << 1.0, -2.0, 1.0;
  CHECK((c.full - 0.25 * hbar * hbar.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("zero features give zero curvature rows") {
  Rng rng(2);
  Network net = random_net(rng, {2, 3, 2}, Activation::relu);
  // Penultimate unit 1 is dead for every input.
  net.mutable_layers()[0].weight.row(1).setZero();
  net.mutable_layers()[0].bias(1) = -1.0;
  const Dataset data = testing::regression_set(random_matrix(rng, 6, 2), random_matrix(rng, 6, 2));
  const Curvature c = fit_curvature(net, data, LossKind::gaussian(1.0), CurvatureKind::full_ggn, Subset::last_layer);
  for (Eigen::Index out = 0; out < 2; ++out) {
    CHECK(c.full.row(out * 4 + 1).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("full GGN matches an independent Jacobian oracle") {
  Rng rng(3);
  for (int t = 0; t < 24; ++t) {
    const Problem p = random_problem(rng, t % 3, 4);
    const Curvature c = fit_curvature(p.net, p.data, p.loss, CurvatureKind::full_ggn, Subset::all_layers);
    Matrix oracle = Matrix::Zero(p.net.parameter_count(), p.net.parameter_count());
    for (Eigen::Index i = 0; i < p.data.size(); ++i) {
      const Vector x = p.data.features.row(i).transpose();
      const Matrix jac = fd_param_jacobian(p.net, x);
      const Vector f = predict(p.net, x.transpose()).row(0).transpose();
      oracle += jac.transpose() * hand_lambda(p.loss, f) * jac;
    }
    CHECK(testing::rel_err(c.full, oracle) < 1e-6);
    const Curvature d = fit_curvature(p.net, p.data, p.loss, CurvatureKind::diag_ggn, Subset::all_layers);
    CHECK((d.diag - c.full.diagonal()).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + c.full.diagonal().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("last-layer GGN is the exact Hessian of the loss in the last layer") {
  Rng rng(4);
  for (int t = 0; t < 12; ++t) {
    const Problem p = random_problem(rng, t % 3, 5);
    const Curvature c = fit_curvature(p.net, p.data, p.loss, CurvatureKind::full_ggn, Subset::last_layer);
    const Vector theta = last_layer_params(p.net);
    auto f = [&](const Vector& q) {
      Network probe = p.net;
      set_last_layer_params(probe, q);
      return map_loss(probe, p.data, p.loss, 0.0).value;
    };
    Matrix hess(theta.size(), theta.size());
    const double h = 1e-4;
    for (Eigen::Index a = 0; a < theta.size(); ++a) {
      for (Eigen::Index b = 0; b < theta.size(); ++b) {
        auto shifted = [&](double da, double db) {
          Vector q = theta;
          q(a) += da;
          q(b) += db;
          return f(q);
        };
        hess(a, b) = (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4 * h * h);
      }
    }
    CHECK(testing::rel_err(c.full, hess) < 1e-5);
  }
}

TEST_CASE("kfac factors") {
  Rng rng(5);
  for (int t = 0; t < 12; ++t) {
    const Problem one = random_problem(rng, t % 3, 1);
    const Curvature k1 = fit_curvature(one.net, one.data, one.loss, CurvatureKind::kfac_last_layer, Subset::last_layer);
    const Curvature f1 = fit_curvature(one.net, one.data, one.loss, CurvatureKind::full_ggn, Subset::last_layer);
    CHECK(testing::rel_err(k1.dense(), f1.full) < 1e-12);

    const Problem p = random_problem(rng, t % 3, 6);
    const Curvature k = fit_curvature(p.net, p.data, p.loss, CurvatureKind::kfac_last_layer, Subset::last_layer);
    const Matrix feats = last_layer_features(p.net, p.data.features);
    const Matrix out = predict(p.net, p.data.features);
    Matrix g = Matrix::Zero(out.cols(), out.cols());
    Matrix a = Matrix::Zero(feats.cols(), feats.cols());
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
      g += hand_lambda(p.loss, out.row(i).transpose());
      a += feats.row(i).transpose() * feats.row(i);
    }
    a /= static_cast<double>(feats.rows());
    CHECK(testing::rel_err(k.kfac_g, g) < 1e-12);
    CHECK(testing::rel_err(k.kfac_a, a) < 1e-12);
    CHECK(testing::rel_err(k.dense(), kron(g, a)) < 1e-12);
  }
}

TEST_CASE("curvature argument checks") {
  Rng rng(6);
  const Problem p = random_problem(rng, 0, 3);
  CHECK_THROWS_AS(fit_curvature(p.net, p.data, p.loss, CurvatureKind::kfac_last_layer, Subset::all_layers),
                  InvalidArgument);
  CHECK_THROWS_AS(fit_curvature(p.net, p.data, p.loss, CurvatureKind::full_ggn, Subset::all_layers, 1),
                  InvalidArgument);
  Dataset empty = p.data;
  empty.features = Matrix::Zero(0, p.data.dim());
  empty.targets = Matrix::Zero(0, p.data.targets.cols());
  CHECK_THROWS_AS(fit_curvature(p.net, empty, p.loss, CurvatureKind::diag_ggn, Subset::last_layer), InvalidArgument);
}

TEST_CASE("posterior covariance examples") {
  Curvature zero;
  zero.kind = CurvatureKind::diag_ggn;
  zero.diag = Vector::Zero(3);
  const LaplacePosterior a = build_posterior(zero, Vector::Zero(3), 2.0);
  CHECK((a.covariance() - 0.5 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);

  Curvature ident;
  ident.kind = CurvatureKind::full_ggn;
  ident.full = Matrix::Identity(3, 3);
  const LaplacePosterior b = build_posterior(ident, Vector::Zero(3), 1.0);
  CHECK((b.covariance() - 0.5 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(b.jitter() == 0.0);

  CHECK_THROWS_AS(build_posterior(ident, Vector::Zero(2), 1.0), DimensionMismatch);
  CHECK_THROWS_AS(build_posterior(ident, Vector::Zero(3), -1.0), InvalidArgument);
}

TEST_CASE("every representation agrees with the dense inverse") {
  Rng rng(7);
  for (int t = 0; t < 12; ++t) {
    const Problem p = random_problem(rng, t % 3, 8);
    const double lambda = 0.1 + rng.uniform();
    for (CurvatureKind kind : {CurvatureKind::full_ggn, CurvatureKind::diag_ggn, CurvatureKind::kfac_last_layer}) {
      const Curvature c = fit_curvature(p.net, p.data, p.loss, kind, Subset::last_layer);
      const LaplacePosterior post = build_posterior(c, last_layer_params(p.net), lambda);
      Matrix precision = c.dense();
      precision.diagonal().array() += lambda;
      const Matrix oracle = precision.inverse();
      CHECK(testing::rel_err(post.covariance(), oracle) < 1e-9);
      CHECK(testing::rel_err(post.marginal_variances(), oracle.diagonal()) < 1e-9);
      const Vector g = random_matrix(rng, post.dim(), 1).col(0);
      CHECK(post.quadratic_form(g) == doctest::Approx((g.transpose() * oracle * g)(0, 0)).epsilon(1e-9));
    }
  }
}

TEST_CASE("posterior variance shrinks as the prior precision grows") {
  Rng rng(8);
  const Problem p = random_problem(rng, 1, 10);
  const Curvature c = fit_curvature(p.net, p.data, p.loss, CurvatureKind::kfac_last_layer, Subset::last_layer);
  Vector previous = Vector::Constant(c.dim(), std::numeric_limits<double>::infinity());
  for (double lambda : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    const Vector v = build_posterior(c, last_layer_params(p.net), lambda).marginal_variances();
    CHECK((v.array() <= previous.array()).all());
    previous = v;
  }
}

TEST_CASE("sampling") {
  Rng rng(9);
  const Problem p = random_problem(rng, 1, 10);
  const Curvature c = fit_curvature(p.net, p.data, p.loss, CurvatureKind::kfac_last_layer, Subset::last_layer);
  const LaplacePosterior tight = build_posterior(c, last_layer_params(p.net), 1e12);
  for (const Vector& s : sample_params(tight, rng, 20)) {
    CHECK((s - tight.mean()).cwiseAbs().maxCoeff() < 1e-4);
  }
  for (CurvatureKind kind : {CurvatureKind::full_ggn, CurvatureKind::diag_ggn, CurvatureKind::kfac_last_layer}) {
    const LaplacePosterior post = build_posterior(fit_curvature(p.net, p.data, p.loss, kind, Subset::last_layer),
                                                  last_layer_params(p.net), 0.5);
    Rng draw(10);
    const Matrix cov = sample_covariance(sample_params(post, draw, 50000), post.mean());
    CHECK((cov - post.covariance()).norm() / post.covariance().norm() < 0.1);
  }
}

TEST_CASE("linearized variance example") {
  const Network net = scalar_net(0.4, 0.1);
  Curvature c;
  c.kind = CurvatureKind::diag_ggn;
  c.diag = Vector(2);
  c.diag << 3.0, 1.0;
  const LaplacePosterior post = build_posterior(c, last_layer_params(net), 1.0);
  Vector x(1);
  x << 2.0;
  CHECK(linearized_variance(net, post, x)(0) == doctest::Approx(1.5).epsilon(1e-14));
}

TEST_CASE("linearized variance matches an independent Jacobian") {
  Rng rng(11);
  for (int t = 0; t < 12; ++t) {
    const Problem p = random_problem(rng, t % 3, 6);
    const Curvature c = fit_curvature(p.net, p.data, p.loss, CurvatureKind::diag_ggn, Subset::all_layers);
    const LaplacePosterior post = build_posterior(c, p.net.flatten(), 0.7);
    const Vector x = random_matrix(rng, p.net.input_dim(), 1).col(0);
    const Matrix jac = fd_param_jacobian(p.net, x);
    const Vector expected = (jac * post.covariance() * jac.transpose()).diagonal();
    CHECK(testing::rel_err(linearized_variance(p.net, post, x), expected) < 1e-6);
    const Matrix batch = linearized_variance_batch(p.net, post, x.transpose());
    CHECK(testing::rel_err(batch.row(0).transpose(), expected) < 1e-6);
  }
}

TEST_CASE("probit approximation") {
  CHECK(probit_predict_binary(2.0, 8.0 / std::numbers::pi) == doctest::Approx(0.8044296825069569).epsilon(1e-14));
  CHECK(probit_predict_binary(1.3, 0.0) == doctest::Approx(testing::sigmoid(1.3)).epsilon(1e-15));
  double prev_pos = 1.0;
  double prev_neg = 0.0;
  for (double v = 0.0; v < 50.0; v += 0.5) {
    const double pos = probit_predict_binary(1.5, v);
    const double neg = probit_predict_binary(-1.5, v);
    CHECK(pos < prev_pos);
    CHECK(neg > prev_neg);
    prev_pos = pos;
    prev_neg = neg;
  }
  CHECK_THROWS_AS(probit_predict_binary(1.0, -1e-3), InvalidArgument);
}

TEST_CASE("predictive distributions") {
  Rng rng(12);
  const Problem cls = random_problem(rng, 1, 10);
  const Matrix x = random_matrix(rng, 7, cls.net.input_dim());
  const Curvature c = fit_curvature(cls.net, cls.data, cls.loss, CurvatureKind::kfac_last_layer, Subset::last_layer);
  PredictConfig cfg;
  cfg.samples = 50;
  const Prediction collapsed = predictive(cls.net, build_posterior(c, last_layer_params(cls.net), 1e12), x, cfg, cls.loss);
  CHECK((collapsed.probs - softmax_rows(predict(cls.net, x))).cwiseAbs().maxCoeff() < 1e-4);

  const Prediction wide = predictive(cls.net, build_posterior(c, last_layer_params(cls.net), 0.01), x, cfg, cls.loss);
  CHECK((wide.probs.array() >= 0.0).all());
  CHECK((wide.probs.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  cfg.method = PredictConfig::Method::probit_linearized;
  CHECK_THROWS_AS(predictive(cls.net, build_posterior(c, last_layer_params(cls.net), 1.0), x, cfg, cls.loss),
                  InvalidArgument);

  const Problem bin = random_problem(rng, 2, 10);
  const Curvature cb = fit_curvature(bin.net, bin.data, bin.loss, CurvatureKind::full_ggn, Subset::last_layer);
  const Prediction probit = predictive(bin.net, build_posterior(cb, last_layer_params(bin.net), 1.0),
                                       random_matrix(rng, 5, bin.net.input_dim()), cfg, bin.loss);
  CHECK(probit.probs.cols() == 2);
  CHECK((probit.probs.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);

  const Problem reg = random_problem(rng, 0, 10);
  const Curvature cr = fit_curvature(reg.net, reg.data, reg.loss, CurvatureKind::diag_ggn, Subset::last_layer);
  cfg.method = PredictConfig::Method::mc;
  const Prediction r = predictive(reg.net, build_posterior(cr, last_layer_params(reg.net), 1.0),
                                  random_matrix(rng, 5, reg.net.input_dim()), cfg, reg.loss);
  CHECK(((r.total_var - r.epistemic_var).array() - 1.0 / reg.loss.noise_precision).abs().maxCoeff() < 1e-12);
  CHECK((r.epistemic_var.array() >= 0.0).all());
}

TEST_CASE("mc predictive is reproducible for a fixed seed") {
  Rng rng(13);
  const Problem p = random_problem(rng, 1, 10);
  const LaplacePosterior post = fit_laplace(p.net, p.data, p.loss, CurvatureKind::kfac_last_layer, Subset::last_layer, 1.0);
  PredictConfig cfg;
  cfg.seed = 42;
  const Matrix x = random_matrix(rng, 4, p.net.input_dim());
  CHECK(mc_predict(p.net, post, x, cfg, p.loss).probs == mc_predict(p.net, post, x, cfg, p.loss).probs);
}

TEST_CASE("candidate selection") {
  std::vector<TuneCandidate> c{{0.1, 3.0, true}, {1.0, 5.0, false}, {10.0, 3.0, true}, {100.0, 1.0, true}};
  CHECK(select_candidate(c, true) == 0);
  CHECK(select_candidate(c, false) == 3);
  for (auto& x : c) x.ok = false;
  CHECK_THROWS_AS(select_candidate(c, true), NotPositiveDefinite);
  CHECK(default_prior_grid().size() == 17);
  CHECK(default_prior_grid().front() == doctest::Approx(1e-4));
  CHECK(default_prior_grid().back() == doctest::Approx(1e4));
}

TEST_CASE("prior precision tuning picks the best validation likelihood") {
  Rng rng(14);
  const Dataset train = gen_two_moons(80, 0.1, 1);
  const Dataset val = gen_two_moons(40, 0.1, 2);
  const Network init = init_network({2, 10, 2}, Activation::relu, rng);
  TrainConfig tc;
  tc.epochs = 50;
  tc.learning_rate = 0.01;
  const Network net = train_map(init, train, LossKind::categorical(), tc).net;
  const Curvature c = fit_curvature(net, train, LossKind::categorical(), CurvatureKind::kfac_last_layer, Subset::last_layer);
  PredictConfig cfg;
  cfg.samples = 30;
  const std::vector<double> grid{0.01, 1.0, 100.0};
  const TuneResult r = tune_prior_precision(net, c, last_layer_params(net), val, TuneObjective::val_log_likelihood,
                                            grid, cfg, LossKind::categorical());
  REQUIRE(r.candidates.size() == 3);
  std::size_t best = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const Prediction pred = predictive(net, build_posterior(c, last_layer_params(net), grid[i]), val.features, cfg,
                                       LossKind::categorical());
    CHECK(r.candidates[i].score == doctest::Approx(predictive_log_likelihood(pred, val, LossKind::categorical())));
    if (r.candidates[i].score > r.candidates[best].score) best = i;
  }
  CHECK(r.best == grid[best]);
  CHECK_THROWS_AS(tune_prior_precision(net, c, last_layer_params(net), val, TuneObjective::ood_mmc, grid, cfg,
                                       LossKind::categorical()),
                  InvalidArgument);
}

TEST_CASE("predictive log likelihood by hand") {
  Prediction pred;
  pred.probs = Matrix(2, 2);
  pred.probs << 0.8, 0.2, 0.4, 0.6;
  const Dataset d = testing::classification_set(Matrix::Zero(2, 1), {0, 1}, 2);
  CHECK(predictive_log_likelihood(pred, d, LossKind::categorical()) ==
        doctest::Approx(0.5 * (std::log(0.8) + std::log(0.6))));
  Prediction reg;
  reg.mean = Matrix::Zero(1, 1);
  reg.total_var = Matrix::Constant(1, 1, 2.0);
  const Dataset r = testing::regression_set(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 1.0));
  CHECK(predictive_log_likelihood(reg, r, LossKind::gaussian(1.0)) ==
        doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 2.0) - 0.25));
}

}  // TEST_SUITE
