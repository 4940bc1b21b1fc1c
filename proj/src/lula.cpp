#include "lula/lula.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lula/error.hpp"
#include "lula/metrics.hpp"

namespace lula {
namespace {

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

// `batch` rows drawn without replacement, or the whole set when batch is 0 or
// not smaller than the set.
Matrix draw_batch(const Dataset& data, std::size_t batch, Rng& rng) {
  const auto m = static_cast<std::size_t>(data.size());
  if (batch == 0 || batch >= m) return data.features;
  auto perm = random_permutation(m, rng);
  perm.resize(batch);
  std::sort(perm.begin(), perm.end());
  return gather_rows(data.features, perm);
}

void check_matches(const Network& net, const LulaAugmentation& aug) {
  if (aug.weight_masks.size() != net.depth()) {
    throw DimensionMismatch("augmentation record has " + std::to_string(aug.weight_masks.size()) +
                            " layers, network has " + std::to_string(net.depth()));
  }
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (aug.weight_masks[l].rows() != net.layer(l).out_dim() ||
        aug.weight_masks[l].cols() != net.layer(l).in_dim()) {
      throw DimensionMismatch("augmentation mask of layer " + std::to_string(l) +
                              " does not match the network");
    }
  }
}

LaplacePosterior refit(const Network& net, const LulaProblem& problem) {
  if (!problem.fit) throw InvalidArgument("LULA problem has no curvature data");
  const Curvature curv =
      fit_curvature(net, *problem.fit, problem.loss, problem.curvature, Subset::last_layer);
  return build_posterior(curv, last_layer_params(net), problem.prior_precision);
}

}  // namespace

double default_init_std(Eigen::Index fan_in) {
  return 0.1 * std::sqrt(2.0 / static_cast<double>(fan_in));
}

Vector LulaAugmentation::flat_mask() const {
  Eigen::Index d = 0;
  for (std::size_t l = 0; l < weight_masks.size(); ++l) d += weight_masks[l].size() + bias_masks[l].size();
  Vector out(d);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weight_masks.size(); ++l) {
    const Mask& w = weight_masks[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) out(k++) = w(i, j) ? 1.0 : 0.0;
    }
    for (Eigen::Index i = 0; i < bias_masks[l].size(); ++i) out(k++) = bias_masks[l](i) ? 1.0 : 0.0;
  }
  return out;
}

std::vector<Eigen::Index> LulaAugmentation::free_indices() const {
  const Vector mask = flat_mask();
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask(i) != 0.0) out.push_back(i);
  }
  return out;
}

Eigen::Index LulaAugmentation::free_count() const {
  return static_cast<Eigen::Index>(free_indices().size());
}

std::vector<Eigen::Index> penultimate_counts(const Network& net, Eigen::Index units) {
  if (net.depth() < 2) throw InvalidArgument("LULA units need at least one hidden layer");
  std::vector<Eigen::Index> counts(net.depth() - 1, 0);
  counts.back() = units;
  return counts;
}

Augmented augment(const Network& net, const std::vector<Eigen::Index>& counts, Rng& rng,
                  std::optional<double> init_std) {
  const std::size_t depth = net.depth();
  if (counts.size() + 1 != depth) {
    throw InvalidArgument("augment: expected " + std::to_string(depth - 1) +
                          " unit counts (hidden layers only), got " + std::to_string(counts.size()));
  }
  for (auto c : counts) {
    if (c < 0) throw InvalidArgument("augment: unit counts must be non-negative");
  }
  if (init_std && !(*init_std >= 0.0)) throw InvalidArgument("augment: negative init_std");

  Augmented result;
  result.aug.unit_counts = counts;
  result.aug.original_dims = net.dims();
  std::vector<Layer> layers;
  Eigen::Index prev_added = 0;
  for (std::size_t l = 0; l < depth; ++l) {
    const Layer& orig = net.layer(l);
    const Eigen::Index n_in = orig.in_dim();
    const Eigen::Index n_out = orig.out_dim();
    const Eigen::Index added = l + 1 < depth ? counts[l] : 0;

    Layer layer;
    layer.activation = orig.activation;
    layer.weight = Matrix::Zero(n_out + added, n_in + prev_added);
    layer.weight.topLeftCorner(n_out, n_in) = orig.weight;
    layer.bias = Vector::Zero(n_out + added);
    layer.bias.head(n_out) = orig.bias;
    Mask wmask = Mask::Constant(n_out + added, n_in + prev_added, false);
    MaskVector bmask = MaskVector::Constant(n_out + added, false);
    if (l + 1 < depth) {
      const double sd = init_std.value_or(default_init_std(n_in));
      result.aug.init_std.push_back(sd);
      for (Eigen::Index i = n_out; i < n_out + added; ++i) {
        for (Eigen::Index j = 0; j < n_in; ++j) {
          layer.weight(i, j) = sd * rng.normal();
          wmask(i, j) = true;
        }
      }
      for (Eigen::Index i = n_out; i < n_out + added; ++i) {
        layer.bias(i) = sd * rng.normal();
        bmask(i) = true;
      }
    }
    result.aug.weight_masks.push_back(std::move(wmask));
    result.aug.bias_masks.push_back(std::move(bmask));
    layers.push_back(std::move(layer));
    prev_added = added;
  }
  result.net = Network(std::move(layers));
  return result;
}

Vector mask_gradient(const Vector& grads, const LulaAugmentation& aug) {
  const Vector mask = aug.flat_mask();
  if (mask.size() != grads.size()) {
    throw DimensionMismatch("mask_gradient: gradient has " + std::to_string(grads.size()) +
                            " entries, mask has " + std::to_string(mask.size()));
  }
  Vector out(grads.size());
  for (Eigen::Index i = 0; i < grads.size(); ++i) out(i) = mask(i) != 0.0 ? grads(i) : 0.0;
  return out;
}

Gradients mask_gradient(const Gradients& grads, const LulaAugmentation& aug) {
  if (grads.weight.size() != aug.weight_masks.size()) {
    throw DimensionMismatch("mask_gradient: layer count mismatch");
  }
  Gradients out = grads;
  for (std::size_t l = 0; l < grads.weight.size(); ++l) {
    const Mask& wm = aug.weight_masks[l];
    const MaskVector& bm = aug.bias_masks[l];
    if (wm.rows() != grads.weight[l].rows() || wm.cols() != grads.weight[l].cols() ||
        bm.size() != grads.bias[l].size()) {
      throw DimensionMismatch("mask_gradient: shape mismatch in layer " + std::to_string(l));
    }
    out.weight[l] = wm.select(grads.weight[l], 0.0);
    out.bias[l] = bm.select(grads.bias[l], 0.0);
  }
  return out;
}

bool verify_structure(const Network& original, const Network& augmented,
                      const LulaAugmentation& aug) {
  if (original.depth() != augmented.depth() || aug.weight_masks.size() != augmented.depth()) {
    return false;
  }
  Eigen::Index prev_added = 0;
  for (std::size_t l = 0; l < original.depth(); ++l) {
    const Layer& o = original.layer(l);
    const Layer& a = augmented.layer(l);
    const Eigen::Index added = l + 1 < original.depth() ? aug.unit_counts[l] : 0;
    if (a.out_dim() != o.out_dim() + added || a.in_dim() != o.in_dim() + prev_added) return false;
    for (Eigen::Index i = 0; i < o.out_dim(); ++i) {
      for (Eigen::Index j = 0; j < o.in_dim(); ++j) {
        if (!same_bits(o.weight(i, j), a.weight(i, j))) return false;
      }
      if (!same_bits(o.bias(i), a.bias(i))) return false;
    }
    for (Eigen::Index i = 0; i < a.out_dim(); ++i) {
      for (Eigen::Index j = o.in_dim(); j < a.in_dim(); ++j) {
        if (a.weight(i, j) != 0.0) return false;
      }
    }
    prev_added = added;
  }
  return true;
}

double output_preservation_gap(const Network& original, const Network& augmented, Rng& rng,
                               std::size_t count, double scale) {
  Matrix x(static_cast<Eigen::Index>(count), original.input_dim());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = scale * rng.normal();
  }
  return (predict(original, x) - predict(augmented, x)).cwiseAbs().maxCoeff();
}

std::string_view to_string(VarianceConfig::Evaluator evaluator) {
  return evaluator == VarianceConfig::Evaluator::mc ? "mc" : "linearized";
}

VarianceConfig::Evaluator evaluator_from_string(std::string_view name) {
  if (name == "mc") return VarianceConfig::Evaluator::mc;
  if (name == "linearized") return VarianceConfig::Evaluator::linearized;
  throw InvalidArgument("unknown variance evaluator '" + std::string(name) + "'");
}

std::string_view to_string(LulaTrainConfig::GradientMethod method) {
  return method == LulaTrainConfig::GradientMethod::analytic ? "analytic" : "finite_difference";
}

LulaTrainConfig::GradientMethod gradient_method_from_string(std::string_view name) {
  if (name == "analytic") return LulaTrainConfig::GradientMethod::analytic;
  if (name == "finite_difference") return LulaTrainConfig::GradientMethod::finite_difference;
  throw InvalidArgument("unknown gradient method '" + std::string(name) + "'");
}

Vector total_variance_batch(const Network& net, const LaplacePosterior& post, const Matrix& x,
                            const VarianceConfig& config) {
  if (config.evaluator == VarianceConfig::Evaluator::linearized) {
    return linearized_variance_batch(net, post, x).rowwise().sum();
  }
  if (config.samples < 1) throw InvalidArgument("total_variance: need at least one sample");
  Rng rng(config.seed);
  const auto outputs = sample_outputs(net, post, x, rng, config.samples);
  Matrix first = Matrix::Zero(x.rows(), net.output_dim());
  Matrix second = Matrix::Zero(x.rows(), net.output_dim());
  for (const auto& f : outputs) {
    first += f;
    second.array() += f.array().square();
  }
  const double inv_s = 1.0 / static_cast<double>(config.samples);
  first *= inv_s;
  second *= inv_s;
  return (second - first.cwiseProduct(first)).rowwise().sum();
}

double total_variance(const Network& net, const LaplacePosterior& post, const Vector& x,
                      const VarianceConfig& config) {
  return total_variance_batch(net, post, x.transpose(), config)(0);
}

double lula_objective(const Network& net, const LaplacePosterior& post, const Matrix& in_batch,
                      const Matrix& out_batch, const VarianceConfig& config) {
  if (in_batch.rows() == 0 || out_batch.rows() == 0) {
    throw InvalidArgument("lula_objective: both batches must be nonempty");
  }
  return total_variance_batch(net, post, in_batch, config).mean() -
         total_variance_batch(net, post, out_batch, config).mean();
}

double lula_loss(const Network& net, const LulaProblem& problem, const Matrix& in_batch,
                 const Matrix& out_batch) {
  const LaplacePosterior post = refit(net, problem);
  return lula_objective(net, post, in_batch, out_batch, problem.variance);
}

Vector lula_gradient_fd(const Network& net, const LulaAugmentation& aug,
                        const LulaProblem& problem, const Matrix& in_batch,
                        const Matrix& out_batch) {
  check_matches(net, aug);
  const Vector theta = net.flatten();
  const auto free = aug.free_indices();
  Vector grad = Vector::Zero(theta.size());
  parallel_for(free.size(), [&](std::size_t f) {
    const Eigen::Index p = free[f];
    const double step = 1e-4 * std::max(1.0, std::abs(theta(p)));
    Network probe = net;
    Vector shifted = theta;
    shifted(p) = theta(p) + step;
    probe.unflatten(shifted);
    const double up = lula_loss(probe, problem, in_batch, out_batch);
    shifted(p) = theta(p) - step;
    probe.unflatten(shifted);
    const double down = lula_loss(probe, problem, in_batch, out_batch);
    grad(p) = (up - down) / (2.0 * step);
  });
  return grad;
}

Vector lula_gradient_analytic(const Network& net, const LulaProblem& problem,
                              const Matrix& in_batch, const Matrix& out_batch) {
  if (problem.curvature != CurvatureKind::diag_ggn ||
      problem.variance.evaluator != VarianceConfig::Evaluator::linearized) {
    throw InvalidArgument("analytic LULA gradient needs a diag_ggn posterior and the linearized evaluator");
  }
  if (!problem.fit) throw InvalidArgument("LULA problem has no curvature data");
  if (in_batch.rows() == 0 || out_batch.rows() == 0) {
    throw InvalidArgument("lula gradient: both batches must be nonempty");
  }
  const std::size_t depth = net.depth();
  Vector grad = Vector::Zero(net.parameter_count());
  if (depth < 2) return grad;

  const Eigen::Index k = net.output_dim();
  const Eigen::Index hidden = net.layer(depth - 1).in_dim();
  const Eigen::Index cols = hidden + 1;

  const ForwardTrace fit_trace = forward(net, problem.fit->features);
  const ForwardTrace in_trace = forward(net, in_batch);
  const ForwardTrace out_trace = forward(net, out_batch);
  const Matrix& h_fit = fit_trace.post[depth - 1];
  const Matrix& h_in = in_trace.post[depth - 1];
  const Matrix& h_out = out_trace.post[depth - 1];

  // Posterior variances s(i, j) of the last-layer weight (i, j), j over
  // bias-augmented features; the bias column is constant and carries no gradient.
  const Curvature curv =
      fit_curvature(net, *problem.fit, problem.loss, CurvatureKind::diag_ggn, Subset::last_layer);
  const LaplacePosterior post = build_posterior(curv, last_layer_params(net), problem.prior_precision);
  const Vector var_flat = post.marginal_variances();
  const Eigen::Map<const Matrix> s(var_flat.data(), k, cols);

  const Vector col_sum = s.leftCols(hidden).colwise().sum().transpose();          // sum_i s_ij
  const double n_in = static_cast<double>(in_batch.rows());
  const double n_out = static_cast<double>(out_batch.rows());
  // D_j = mean_in h_j^2 - mean_out h_j^2 = dL/ds_ij for every i.
  const Vector d_j = (h_in.array().square().colwise().sum() / n_in -
                      h_out.array().square().colwise().sum() / n_out).transpose();

  Matrix g_in = (2.0 / n_in) * (h_in.array().rowwise() * col_sum.transpose().array()).matrix();
  Matrix g_out = (-2.0 / n_out) * (h_out.array().rowwise() * col_sum.transpose().array()).matrix();

  // dL/dh_j(d) = sum_i D_j * (-s_ij^2) * 2 * Lambda_d(i,i) * h_j(d)
  Matrix g_fit(h_fit.rows(), hidden);
  const Matrix& outputs = fit_trace.output();
  const Matrix s_sq = s.leftCols(hidden).array().square();
  for (Eigen::Index r = 0; r < h_fit.rows(); ++r) {
    const Matrix lam = output_hessian(problem.loss, outputs.row(r).transpose());
    for (Eigen::Index j = 0; j < hidden; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) acc += s_sq(i, j) * lam(i, i);
      g_fit(r, j) = -2.0 * d_j(j) * acc * h_fit(r, j);
    }
  }

  grad += backward_from(net, fit_trace, depth - 1, g_fit).flatten();
  grad += backward_from(net, in_trace, depth - 1, g_in).flatten();
  grad += backward_from(net, out_trace, depth - 1, g_out).flatten();
  return grad;
}

LulaTrainResult train_lula(const Network& net, const LulaAugmentation& aug,
                           const Dataset& in_data, const Dataset& out_data, const LossKind& loss,
                           double prior_precision, const LulaTrainConfig& config,
                           const Dataset* curvature_data) {
  check_matches(net, aug);
  if (config.epochs < 0) throw InvalidArgument("train_lula: negative epoch count");
  if (in_data.size() == 0 || out_data.size() == 0) {
    throw InvalidArgument("train_lula: inlier and outlier sets must be nonempty");
  }
  LulaProblem problem;
  problem.fit = curvature_data ? curvature_data : &in_data;
  problem.loss = loss;
  problem.prior_precision = prior_precision;
  problem.curvature = config.curvature;
  problem.variance = config.variance;

  LulaTrainResult result{net, {}, std::nullopt};
  const auto free = aug.free_indices();
  Vector theta = net.flatten();
  Vector free_params(static_cast<Eigen::Index>(free.size()));
  for (std::size_t f = 0; f < free.size(); ++f) free_params(static_cast<Eigen::Index>(f)) = theta(free[f]);

  Rng rng(config.seed);
  FirstOrderOptimizer opt(config.optimizer, config.learning_rate);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Matrix in_batch = draw_batch(in_data, config.in_batch, rng);
    const Matrix out_batch = draw_batch(out_data, config.out_batch, rng);
    problem.variance.seed = config.variance.seed + static_cast<std::uint64_t>(epoch);
    double value = 0.0;
    Vector grad;
    try {
      value = lula_loss(result.net, problem, in_batch, out_batch);
      grad = config.gradient == LulaTrainConfig::GradientMethod::analytic
                 ? lula_gradient_analytic(result.net, problem, in_batch, out_batch)
                 : lula_gradient_fd(result.net, aug, problem, in_batch, out_batch);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite("train_lula: posterior refit failed at epoch " +
                                std::to_string(epoch + 1) + ": " + e.what());
    }
    if (!std::isfinite(value) || !grad.allFinite()) {
      throw NumericError("train_lula: non-finite objective at epoch " + std::to_string(epoch + 1));
    }
    result.history.push_back(value);
    const Vector masked = mask_gradient(grad, aug);
    Vector free_grad(free_params.size());
    for (std::size_t f = 0; f < free.size(); ++f) free_grad(static_cast<Eigen::Index>(f)) = masked(free[f]);
    opt.step(free_params, free_grad);
    for (std::size_t f = 0; f < free.size(); ++f) theta(free[f]) = free_params(static_cast<Eigen::Index>(f));
    result.net.unflatten(theta);
  }
  problem.variance.seed = config.variance.seed;
  result.posterior = refit(result.net, problem);
  return result;
}

std::vector<Eigen::Index> default_unit_grid() { return {32, 64, 128, 256, 512}; }

Eigen::Index select_units(const std::vector<UnitScore>& scores) {
  const UnitScore* best = nullptr;
  for (const auto& s : scores) {
    if (!s.ok) continue;
    if (!best || s.score < best->score || (s.score == best->score && s.units < best->units)) {
      best = &s;
    }
  }
  if (!best) throw NotPositiveDefinite("grid search: every candidate failed");
  return best->units;
}

GridSearchResult grid_search_units(const Network& net, const std::vector<Eigen::Index>& candidates,
                                   const Dataset& curvature_data, const Dataset& in_val,
                                   const Dataset& out_val, const LossKind& loss,
                                   double prior_precision, const LulaTrainConfig& train_config,
                                   const GridSearchConfig& search_config) {
  if (candidates.empty()) throw InvalidArgument("grid_search_units: empty candidate set");
  if (!loss.is_classification()) throw InvalidArgument("grid_search_units needs a classifier");
  GridSearchResult result;
  const Rng base(search_config.seed);
  for (Eigen::Index units : candidates) {
    UnitScore score{units, 0.0, false};
    try {
      Rng rng = base.derive(static_cast<std::uint64_t>(units));
      const Augmented augmented =
          augment(net, penultimate_counts(net, units), rng, search_config.init_std);
      const LulaTrainResult trained = train_lula(augmented.net, augmented.aug, in_val, out_val,
                                                 loss, prior_precision, train_config, &curvature_data);
      const LaplacePosterior post = fit_laplace(trained.net, curvature_data, loss,
                                                search_config.eval_curvature, Subset::last_layer,
                                                prior_precision);
      const Matrix p_in = predictive(trained.net, post, in_val.features, search_config.predict, loss).probs;
      const Matrix p_out = predictive(trained.net, post, out_val.features, search_config.predict, loss).probs;
      const double k = static_cast<double>(p_in.cols());
      score.score = std::abs(1.0 - mmc(p_in)) + std::abs(1.0 / k - mmc(p_out));
      score.ok = std::isfinite(score.score);
    } catch (const NotPositiveDefinite& e) {
      result.warnings.push_back("skipping " + std::to_string(units) + " units: " + e.what());
    }
    result.scores.push_back(score);
  }
  result.best = select_units(result.scores);
  return result;
}

void save_augmentation(const LulaAugmentation& aug, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "lula-augmentation 1\n";
  out << "original_dims " << aug.original_dims.size();
  for (auto d : aug.original_dims) out << ' ' << d;
  out << "\nunit_counts " << aug.unit_counts.size();
  for (auto c : aug.unit_counts) out << ' ' << c;
  out << "\ninit_std " << aug.init_std.size();
  for (double s : aug.init_std) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), s, std::chars_format::general, 17);
    out << ' ' << std::string_view(buf, static_cast<std::size_t>(end - buf));
  }
  out << "\nlayers " << aug.weight_masks.size() << '\n';
  for (std::size_t l = 0; l < aug.weight_masks.size(); ++l) {
    const Mask& w = aug.weight_masks[l];
    out << "layer " << l << " rows " << w.rows() << " cols " << w.cols() << "\nweight_mask\n";
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) out << (w(i, j) ? '1' : '0');
      out << '\n';
    }
    out << "bias_mask\n";
    for (Eigen::Index i = 0; i < aug.bias_masks[l].size(); ++i) out << (aug.bias_masks[l](i) ? '1' : '0');
    out << '\n';
  }
  out << "end\n";
}

LulaAugmentation load_augmentation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open augmentation file '" + path.string() + "'");
  auto fail = [&](const std::string& what) {
    return FormatError("augmentation file '" + path.string() + "' malformed: " + what);
  };
  auto expect = [&](const std::string& word) {
    std::string tok;
    if (!(in >> tok) || tok != word) throw fail("expected '" + word + "'");
  };
  auto count = [&]() {
    long v = -1;
    if (!(in >> v) || v < 0) throw fail("bad count");
    return v;
  };
  expect("lula-augmentation");
  if (count() != 1) throw fail("unsupported version");
  LulaAugmentation aug;
  expect("original_dims");
  for (long i = 0, n = count(); i < n; ++i) aug.original_dims.push_back(count());
  expect("unit_counts");
  for (long i = 0, n = count(); i < n; ++i) aug.unit_counts.push_back(count());
  expect("init_std");
  for (long i = 0, n = count(); i < n; ++i) {
    double v = 0;
    if (!(in >> v)) throw fail("bad init_std");
    aug.init_std.push_back(v);
  }
  expect("layers");
  const long layers = count();
  for (long l = 0; l < layers; ++l) {
    expect("layer");
    if (count() != l) throw fail("layer index");
    expect("rows");
    const long rows = count();
    expect("cols");
    const long cols = count();
    expect("weight_mask");
    Mask w(rows, cols);
    for (long i = 0; i < rows; ++i) {
      std::string line;
      if (!(in >> line) || static_cast<long>(line.size()) != cols) throw fail("weight mask row");
      for (long j = 0; j < cols; ++j) {
        if (line[static_cast<std::size_t>(j)] != '0' && line[static_cast<std::size_t>(j)] != '1') throw fail("mask digit");
        w(i, j) = line[static_cast<std::size_t>(j)] == '1';
      }
    }
    expect("bias_mask");
    std::string line;
    if (!(in >> line) || static_cast<long>(line.size()) != rows) throw fail("bias mask");
    MaskVector b(rows);
    for (long i = 0; i < rows; ++i) b(i) = line[static_cast<std::size_t>(i)] == '1';
    aug.weight_masks.push_back(std::move(w));
    aug.bias_masks.push_back(std::move(b));
  }
  expect("end");
  if (aug.unit_counts.size() + 1 != aug.weight_masks.size() ||
      aug.original_dims.size() != aug.weight_masks.size() + 1) {
    throw fail("inconsistent layer counts");
  }
  return aug;
}

}  // namespace lula
