#include "lula/cli/demo.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>

#include "lula/metrics.hpp"

namespace lula::cli {
namespace {

std::vector<int> argmax_labels(const Matrix& outputs) {
  std::vector<int> out(static_cast<std::size_t>(outputs.rows()));
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    Eigen::Index c = 0;
    outputs.row(i).maxCoeff(&c);
    out[static_cast<std::size_t>(i)] = static_cast<int>(c);
  }
  return out;
}

Matrix far_field_ring(double r_min, double r_max, std::size_t count, Rng& rng) {
  Matrix ring(static_cast<Eigen::Index>(count), 2);
  for (Eigen::Index i = 0; i < ring.rows(); ++i) {
    const double r = rng.uniform(r_min, r_max);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    ring(i, 0) = r * std::cos(a);
    ring(i, 1) = r * std::sin(a);
  }
  return ring;
}

LulaTrainConfig demo_lula_config(const ExperimentConfig& config, int epochs, std::uint64_t seed) {
  LulaTrainConfig lc = config.lula.train;
  lc.epochs = epochs;
  lc.gradient = config.demo.gradient;
  if (lc.gradient == LulaTrainConfig::GradientMethod::analytic) {
    lc.curvature = CurvatureKind::diag_ggn;
    lc.variance.evaluator = VarianceConfig::Evaluator::linearized;
  }
  lc.seed = seed;
  return lc;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, static_cast<std::size_t>(end - buf));
}

MoonsDemoResult run_moons_demo(const ExperimentConfig& config) {
  const DemoConfig& d = config.demo;
  const Rng base(d.seed);
  const LossKind loss = LossKind::categorical();

  const Dataset all = gen_two_moons(d.moons_size, d.moons_noise, base.derive(1).next_u64());
  const Splits sp = split(all, SplitSpec{0.6, 0.2, 0.2, base.derive(2).next_u64()});

  std::vector<Eigen::Index> dims{2};
  dims.insert(dims.end(), d.moons_hidden.begin(), d.moons_hidden.end());
  dims.push_back(2);
  Rng init_rng = base.derive(3);
  const Network init = init_network(dims, Activation::relu, init_rng);
  TrainConfig tc = config.train;
  tc.epochs = d.moons_epochs;
  tc.learning_rate = d.moons_learning_rate;
  tc.weight_decay = d.moons_weight_decay;
  tc.seed = base.derive(4).next_u64();
  const Network map_net = train_map(init, sp.train, loss, tc).net;

  MoonsDemoResult result;
  result.test_accuracy = accuracy(map_net, sp.test);

  Rng ring_rng = base.derive(5);
  const Matrix ring = far_field_ring(d.ring_min, d.ring_max, d.ring_points, ring_rng);
  const auto n = static_cast<Eigen::Index>(d.grid_resolution);
  result.lattice.resize(n * n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double step = 2.0 * d.grid_half_width / static_cast<double>(n - 1);
      result.lattice(i * n + j, 0) = -d.grid_half_width + static_cast<double>(j) * step;
      result.lattice(i * n + j, 1) = -d.grid_half_width + static_cast<double>(i) * step;
    }
  }

  // MAP stage: plain softmax.
  result.lattice_confidence[0] = softmax_rows(predict(map_net, result.lattice)).rowwise().maxCoeff();
  result.ring_mmc[0] = mmc(softmax_rows(predict(map_net, ring)));
  result.test_mmc[0] = mmc(softmax_rows(predict(map_net, sp.test.features)));

  PredictConfig pc = config.laplace.predict;
  pc.seed = base.derive(6).next_u64();
  auto evaluate = [&](const Network& net, std::size_t stage) {
    const LaplacePosterior post = fit_laplace(net, sp.train, loss, config.laplace.curvature,
                                              Subset::last_layer, d.moons_prior_precision);
    result.lattice_confidence[stage] =
        predictive(net, post, result.lattice, pc, loss).probs.rowwise().maxCoeff();
    result.ring_mmc[stage] = mmc(predictive(net, post, ring, pc, loss).probs);
    result.test_mmc[stage] = mmc(predictive(net, post, sp.test.features, pc, loss).probs);
  };
  evaluate(map_net, 1);

  Rng aug_rng = base.derive(7);
  const Augmented augmented =
      augment(map_net, penultimate_counts(map_net, d.moons_units), aug_rng, config.lula.init_std);
  const Dataset outliers = gen_uniform_noise(static_cast<std::size_t>(sp.val.size()) * 3, 2,
                                             -d.moons_outlier_box, d.moons_outlier_box,
                                             base.derive(8).next_u64());
  const LulaTrainResult trained =
      train_lula(augmented.net, augmented.aug, sp.val, outliers, loss, d.moons_prior_precision,
                 demo_lula_config(config, d.moons_lula_epochs, base.derive(9).next_u64()), &sp.train);
  result.lula_history = trained.history;
  evaluate(trained.net, 2);

  result.map_labels = argmax_labels(predict(map_net, sp.test.features));
  result.lula_labels = argmax_labels(predict(trained.net, sp.test.features));
  return result;
}

RegressionDemoResult run_regression_demo(const ExperimentConfig& config) {
  const DemoConfig& d = config.demo;
  const Rng base(d.seed ^ 0x5eedULL);
  const double noise = std::max(d.regression_noise, 1e-3);
  const LossKind loss = LossKind::gaussian(1.0 / (noise * noise));

  const Dataset all = gen_toy_regression(d.regression_size, -3.0, 3.0, d.regression_noise,
                                         base.derive(1).next_u64());
  const Splits sp = split(all, SplitSpec{0.6, 0.2, 0.2, base.derive(2).next_u64()});
  const StandardizedSplit st = standardize(sp.train, {sp.val, sp.test});
  const Dataset& train = st.train;
  const Dataset& val = st.others[0];
  const Dataset& test = st.others[1];

  Rng init_rng = base.derive(3);
  const Network init = init_network({1, d.regression_hidden, 1}, Activation::relu, init_rng);
  TrainConfig tc = config.train;
  tc.epochs = d.regression_epochs;
  tc.learning_rate = d.regression_learning_rate;
  tc.weight_decay = d.regression_weight_decay;
  tc.seed = base.derive(4).next_u64();
  const Network map_net = train_map(init, train, loss, tc).net;

  RegressionDemoResult result;
  const auto n = static_cast<Eigen::Index>(d.grid_resolution);
  Matrix grid_std_units(n, 1);
  const double half = 2.0 * d.grid_half_width;
  for (Eigen::Index i = 0; i < n; ++i) {
    grid_std_units(i, 0) = -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  result.grid = (grid_std_units.col(0).array() * st.stats.std(0) + st.stats.mean(0)).matrix();

  const Dataset outliers_eval = gen_uniform_noise(static_cast<std::size_t>(test.size()) * 5, 1,
                                                  -d.regression_outlier_box, d.regression_outlier_box,
                                                  base.derive(5).next_u64());
  const double noise_std = std::sqrt(1.0 / loss.noise_precision);

  result.grid_mean[0] = predict(map_net, grid_std_units).col(0);
  result.grid_std[0] = Vector::Constant(n, noise_std);
  result.test_std[0] = noise_std;
  result.outlier_std[0] = noise_std;

  PredictConfig pc = config.laplace.predict;
  pc.seed = base.derive(6).next_u64();
  auto evaluate = [&](const Network& net, std::size_t stage) {
    const LaplacePosterior post = fit_laplace(net, train, loss, config.laplace.curvature,
                                              Subset::last_layer, d.regression_prior_precision);
    const Prediction g = predictive(net, post, grid_std_units, pc, loss);
    result.grid_mean[stage] = g.mean.col(0);
    result.grid_std[stage] = g.total_var.col(0).array().sqrt();
    result.test_std[stage] =
        predictive(net, post, test.features, pc, loss).total_var.array().sqrt().mean();
    result.outlier_std[stage] =
        predictive(net, post, outliers_eval.features, pc, loss).total_var.array().sqrt().mean();
  };
  evaluate(map_net, 1);

  Rng aug_rng = base.derive(7);
  const Augmented augmented = augment(map_net, penultimate_counts(map_net, d.regression_units),
                                      aug_rng, config.lula.init_std);
  const Dataset outliers = gen_uniform_noise(static_cast<std::size_t>(val.size()) * 5, 1,
                                             -d.regression_outlier_box, d.regression_outlier_box,
                                             base.derive(8).next_u64());
  const LulaTrainResult trained = train_lula(
      augmented.net, augmented.aug, val, outliers, loss, d.regression_prior_precision,
      demo_lula_config(config, d.regression_lula_epochs, base.derive(9).next_u64()), &train);
  result.lula_history = trained.history;
  evaluate(trained.net, 2);
  return result;
}

std::vector<std::string> write_demo_outputs(const MoonsDemoResult& moons,
                                            const RegressionDemoResult& regression,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  for (std::size_t s = 0; s < 3; ++s) {
    std::string text = "x1,x2,confidence\n";
    for (Eigen::Index i = 0; i < moons.lattice.rows(); ++i) {
      text += format_number(moons.lattice(i, 0)) + ',' + format_number(moons.lattice(i, 1)) + ',' +
              format_number(moons.lattice_confidence[s](i)) + '\n';
    }
    const std::string name = std::string("moons_") + kStageNames[s] + ".csv";
    write_file(dir / name, text);
    written.push_back(name);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    std::string text = "x,mean,std\n";
    for (Eigen::Index i = 0; i < regression.grid.size(); ++i) {
      text += format_number(regression.grid(i)) + ',' + format_number(regression.grid_mean[s](i)) +
              ',' + format_number(regression.grid_std[s](i)) + '\n';
    }
    const std::string name = std::string("regression_") + kStageNames[s] + ".csv";
    write_file(dir / name, text);
    written.push_back(name);
  }

  std::string summary;
  summary += "moons.test_accuracy = " + format_number(moons.test_accuracy) + '\n';
  summary += std::string("moons.labels_preserved = ") +
             (moons.map_labels == moons.lula_labels ? "true" : "false") + '\n';
  for (std::size_t s = 0; s < 3; ++s) {
    summary += std::string("moons.far_field_mmc.") + kStageNames[s] + " = " +
               format_number(moons.ring_mmc[s]) + '\n';
  }
  for (std::size_t s = 0; s < 3; ++s) {
    summary += std::string("moons.test_mmc.") + kStageNames[s] + " = " +
               format_number(moons.test_mmc[s]) + '\n';
  }
  for (std::size_t s = 0; s < 3; ++s) {
    summary += std::string("regression.outlier_mean_std.") + kStageNames[s] + " = " +
               format_number(regression.outlier_std[s]) + '\n';
  }
  for (std::size_t s = 0; s < 3; ++s) {
    summary += std::string("regression.test_mean_std.") + kStageNames[s] + " = " +
               format_number(regression.test_std[s]) + '\n';
  }
  write_file(dir / "summary.txt", summary);
  written.push_back("summary.txt");
  return written;
}

}  // namespace lula::cli
