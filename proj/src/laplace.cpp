#include "lula/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lula/error.hpp"
#include "lula/metrics.hpp"

namespace lula {
namespace {

// Fixed chunk count for reductions over data points: sums are grouped the same
// way whatever the number of worker threads.
constexpr std::size_t kReduceChunks = 16;

template <typename Acc, typename PerPoint>
Acc chunked_sum(std::size_t count, const Acc& zero, PerPoint&& per_point) {
  const std::size_t chunks = std::min(kReduceChunks, std::max<std::size_t>(count, 1));
  std::vector<Acc> partial(chunks, zero);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = count * c / chunks;
    const std::size_t end = count * (c + 1) / chunks;
    for (std::size_t i = begin; i < end; ++i) per_point(i, partial[c]);
  });
  Acc total = zero;
  for (const auto& p : partial) total += p;
  return total;
}

Eigen::Index last_layer_dim(const Network& net) {
  const Layer& last = net.layers().back();
  return last.out_dim() * (last.in_dim() + 1);
}

// Smallest shift from the jitter policy that makes every entry positive.
double positive_shift(const Eigen::Ref<const Vector>& values) {
  const double mean = std::abs(values.mean());
  for (double scale : {0.0, 1e-8, 1e-6}) {
    const double shift = scale * mean;
    if (scale > 0.0 && !(shift > 0.0)) break;
    if ((values.array() + shift).minCoeff() > 0.0) return shift;
  }
  throw NotPositiveDefinite("posterior precision is not positive definite after jitter");
}

}  // namespace

std::string_view to_string(CurvatureKind kind) {
  switch (kind) {
    case CurvatureKind::full_ggn: return "full_ggn";
    case CurvatureKind::diag_ggn: return "diag_ggn";
    case CurvatureKind::kfac_last_layer: return "kfac_last_layer";
  }
  return "diag_ggn";
}

CurvatureKind curvature_kind_from_string(std::string_view name) {
  if (name == "full_ggn") return CurvatureKind::full_ggn;
  if (name == "diag_ggn") return CurvatureKind::diag_ggn;
  if (name == "kfac_last_layer") return CurvatureKind::kfac_last_layer;
  throw InvalidArgument("unknown curvature kind '" + std::string(name) + "'");
}

std::string_view to_string(Subset subset) {
  return subset == Subset::all_layers ? "all_layers" : "last_layer";
}

Subset subset_from_string(std::string_view name) {
  if (name == "all_layers") return Subset::all_layers;
  if (name == "last_layer") return Subset::last_layer;
  throw InvalidArgument("unknown parameter subset '" + std::string(name) + "'");
}

std::string_view to_string(PredictConfig::Method method) {
  return method == PredictConfig::Method::mc ? "mc" : "probit_linearized";
}

PredictConfig::Method predict_method_from_string(std::string_view name) {
  if (name == "mc") return PredictConfig::Method::mc;
  if (name == "probit_linearized") return PredictConfig::Method::probit_linearized;
  throw InvalidArgument("unknown prediction method '" + std::string(name) + "'");
}

std::string_view to_string(TuneObjective objective) {
  return objective == TuneObjective::val_log_likelihood ? "val_log_likelihood" : "ood_mmc";
}

TuneObjective tune_objective_from_string(std::string_view name) {
  if (name == "val_log_likelihood") return TuneObjective::val_log_likelihood;
  if (name == "ood_mmc") return TuneObjective::ood_mmc;
  throw InvalidArgument("unknown tuning objective '" + std::string(name) + "'");
}

Vector last_layer_params(const Network& net) {
  const Layer& last = net.layers().back();
  const Eigen::Index cols = last.in_dim() + 1;
  Vector params(last.out_dim() * cols);
  for (Eigen::Index i = 0; i < last.out_dim(); ++i) {
    for (Eigen::Index j = 0; j < last.in_dim(); ++j) params(i * cols + j) = last.weight(i, j);
    params(i * cols + last.in_dim()) = last.bias(i);
  }
  return params;
}

void set_last_layer_params(Network& net, const Vector& params) {
  Layer& last = net.mutable_layers().back();
  const Eigen::Index cols = last.in_dim() + 1;
  if (params.size() != last.out_dim() * cols) {
    throw DimensionMismatch("last-layer parameter vector has " + std::to_string(params.size()) +
                            " entries, expected " + std::to_string(last.out_dim() * cols));
  }
  for (Eigen::Index i = 0; i < last.out_dim(); ++i) {
    for (Eigen::Index j = 0; j < last.in_dim(); ++j) last.weight(i, j) = params(i * cols + j);
    last.bias(i) = params(i * cols + last.in_dim());
  }
}

Matrix last_layer_features(const Network& net, const Matrix& x) {
  const ForwardTrace trace = forward(net, x);
  const Matrix& h = trace.post[net.depth() - 1];
  Matrix out(h.rows(), h.cols() + 1);
  out.leftCols(h.cols()) = h;
  out.col(h.cols()).setOnes();
  return out;
}

Vector subset_params(const Network& net, Subset subset) {
  return subset == Subset::all_layers ? net.flatten() : last_layer_params(net);
}

Eigen::Index Curvature::dim() const {
  switch (kind) {
    case CurvatureKind::full_ggn: return full.rows();
    case CurvatureKind::diag_ggn: return diag.size();
    case CurvatureKind::kfac_last_layer: return kfac_g.rows() * kfac_a.rows();
  }
  return 0;
}

Matrix Curvature::dense() const {
  switch (kind) {
    case CurvatureKind::full_ggn: return full;
    case CurvatureKind::diag_ggn: return diag.asDiagonal();
    case CurvatureKind::kfac_last_layer: return kron(kfac_g, kfac_a);
  }
  return {};
}

Curvature fit_curvature(const Network& net, const Dataset& data, const LossKind& loss,
                        CurvatureKind kind, Subset subset, Eigen::Index full_cap) {
  if (data.size() == 0) throw InvalidArgument("fit_curvature: empty dataset");
  if (kind == CurvatureKind::kfac_last_layer && subset != Subset::last_layer) {
    throw InvalidArgument("fit_curvature: the Kronecker factorization needs the last-layer subset");
  }
  if (data.dim() != net.input_dim()) {
    throw DimensionMismatch("fit_curvature: dataset has " + std::to_string(data.dim()) +
                            " features, network expects " + std::to_string(net.input_dim()));
  }
  const Eigen::Index d =
      subset == Subset::all_layers ? net.parameter_count() : last_layer_dim(net);
  if (kind == CurvatureKind::full_ggn && d > full_cap) {
    throw InvalidArgument("fit_curvature: full_ggn over " + std::to_string(d) +
                          " parameters exceeds the cap of " + std::to_string(full_cap));
  }

  Curvature curv;
  curv.kind = kind;
  curv.subset = subset;
  curv.data_count = data.size();
  const auto m = static_cast<std::size_t>(data.size());
  const Eigen::Index k = net.output_dim();

  // Output-space Hessians depend only on the network outputs.
  const ForwardTrace trace = forward(net, data.features);
  std::vector<Matrix> lambdas(m);
  for (std::size_t i = 0; i < m; ++i) {
    lambdas[i] = output_hessian(loss, trace.output().row(static_cast<Eigen::Index>(i)).transpose());
  }

  if (subset == Subset::last_layer) {
    const Matrix& h = trace.post[net.depth() - 1];
    Matrix feats(h.rows(), h.cols() + 1);
    feats.leftCols(h.cols()) = h;
    feats.col(h.cols()).setOnes();
    const Eigen::Index n = feats.cols();
    switch (kind) {
      case CurvatureKind::full_ggn: {
        curv.full = Matrix::Zero(d, d);
        Vector weights(feats.rows());
        for (Eigen::Index a = 0; a < k; ++a) {
          for (Eigen::Index b = 0; b < k; ++b) {
            for (std::size_t i = 0; i < m; ++i) weights(static_cast<Eigen::Index>(i)) = lambdas[i](a, b);
            curv.full.block(a * n, b * n, n, n).noalias() =
                feats.transpose() * weights.asDiagonal() * feats;
          }
        }
        break;
      }
      case CurvatureKind::diag_ggn: {
        curv.diag = Vector::Zero(d);
        for (Eigen::Index a = 0; a < k; ++a) {
          for (std::size_t i = 0; i < m; ++i) {
            const double w = lambdas[i](a, a);
            const auto row = static_cast<Eigen::Index>(i);
            curv.diag.segment(a * n, n).array() += w * feats.row(row).transpose().array().square();
          }
        }
        break;
      }
      case CurvatureKind::kfac_last_layer: {
        curv.kfac_g = Matrix::Zero(k, k);
        for (const auto& lam : lambdas) curv.kfac_g += lam;
        curv.kfac_a = feats.transpose() * feats / static_cast<double>(m);
        break;
      }
    }
    return curv;
  }

  // All layers: per-point Jacobians.
  auto jacobian = [&](std::size_t i) {
    return output_jacobian(net, data.features.row(static_cast<Eigen::Index>(i)).transpose());
  };
  if (kind == CurvatureKind::full_ggn) {
    curv.full = chunked_sum<Matrix>(m, Matrix::Zero(d, d), [&](std::size_t i, Matrix& acc) {
      const Matrix jac = jacobian(i);
      acc.noalias() += jac.transpose() * lambdas[i] * jac;
    });
  } else {
    curv.diag = chunked_sum<Vector>(m, Vector::Zero(d), [&](std::size_t i, Vector& acc) {
      const Matrix jac = jacobian(i);
      const Matrix lj = lambdas[i] * jac;
      acc.array() += (jac.array() * lj.array()).colwise().sum().transpose();
    });
  }
  return curv;
}

LaplacePosterior build_posterior(const Curvature& curvature, const Vector& mean,
                                 double prior_precision) {
  if (prior_precision < 0.0) throw InvalidArgument("build_posterior: negative prior precision");
  if (mean.size() != curvature.dim()) {
    throw DimensionMismatch("build_posterior: mean has " + std::to_string(mean.size()) +
                            " entries, curvature covers " + std::to_string(curvature.dim()));
  }
  LaplacePosterior post;
  post.subset_ = curvature.subset;
  post.kind_ = curvature.kind;
  post.mean_ = mean;
  post.prior_precision_ = prior_precision;
  switch (curvature.kind) {
    case CurvatureKind::full_ggn: {
      Matrix precision = curvature.full;
      precision.diagonal().array() += prior_precision;
      LaplacePosterior::Full rep;
      rep.precision_chol = cholesky_jittered(precision, &post.jitter_);
      post.rep_ = std::move(rep);
      break;
    }
    case CurvatureKind::diag_ggn: {
      LaplacePosterior::Diag rep;
      rep.precision = curvature.diag.array() + prior_precision;
      post.jitter_ = positive_shift(rep.precision);
      rep.precision.array() += post.jitter_;
      post.rep_ = std::move(rep);
      break;
    }
    case CurvatureKind::kfac_last_layer: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_g(Eigen::MatrixXd(curvature.kfac_g));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(Eigen::MatrixXd(curvature.kfac_a));
      if (eig_g.info() != Eigen::Success || eig_a.info() != Eigen::Success) {
        throw NotPositiveDefinite("build_posterior: eigendecomposition of Kronecker factors failed");
      }
      LaplacePosterior::Kron rep;
      rep.g_vectors = eig_g.eigenvectors();
      rep.a_vectors = eig_a.eigenvectors();
      // Both factors are PSD; clip round-off negatives.
      const Vector g = eig_g.eigenvalues().cwiseMax(0.0);
      const Vector a = eig_a.eigenvalues().cwiseMax(0.0);
      rep.eigen_precision = (g * a.transpose()).array() + prior_precision;
      const Eigen::Map<const Vector> flat(rep.eigen_precision.data(), rep.eigen_precision.size());
      post.jitter_ = positive_shift(flat);
      rep.eigen_precision.array() += post.jitter_;
      post.rep_ = std::move(rep);
      break;
    }
  }
  return post;
}

LaplacePosterior fit_laplace(const Network& net, const Dataset& data, const LossKind& loss,
                             CurvatureKind kind, Subset subset, double prior_precision) {
  const Curvature curv = fit_curvature(net, data, loss, kind, subset);
  return build_posterior(curv, subset_params(net, subset), prior_precision);
}

double LaplacePosterior::quadratic_form(const Vector& g) const {
  if (g.size() != dim()) {
    throw DimensionMismatch("quadratic_form: vector has " + std::to_string(g.size()) +
                            " entries, posterior has " + std::to_string(dim()));
  }
  if (const auto* full = std::get_if<Full>(&rep_)) {
    const Vector y = full->precision_chol.triangularView<Eigen::Lower>().solve(g);
    return y.squaredNorm();
  }
  if (const auto* diag = std::get_if<Diag>(&rep_)) {
    return (g.array().square() / diag->precision.array()).sum();
  }
  const auto& kr = std::get<Kron>(rep_);
  const Eigen::Map<const Matrix> gm(g.data(), kr.g_vectors.rows(), kr.a_vectors.rows());
  const Matrix y = kr.g_vectors.transpose() * gm * kr.a_vectors;
  return (y.array().square() / kr.eigen_precision.array()).sum();
}

Vector LaplacePosterior::marginal_variances() const {
  if (const auto* full = std::get_if<Full>(&rep_)) {
    return cholesky_solve(full->precision_chol, Matrix::Identity(dim(), dim())).diagonal();
  }
  if (const auto* diag = std::get_if<Diag>(&rep_)) return diag->precision.cwiseInverse();
  const auto& kr = std::get<Kron>(rep_);
  const Matrix u2 = kr.g_vectors.array().square();
  const Matrix v2 = kr.a_vectors.array().square();
  const Matrix inv = kr.eigen_precision.cwiseInverse();
  const Matrix var = u2 * inv * v2.transpose();
  return Eigen::Map<const Vector>(var.data(), var.size());
}

Matrix LaplacePosterior::covariance() const {
  if (const auto* full = std::get_if<Full>(&rep_)) {
    return cholesky_solve(full->precision_chol, Matrix::Identity(dim(), dim()));
  }
  if (const auto* diag = std::get_if<Diag>(&rep_)) {
    return diag->precision.cwiseInverse().asDiagonal();
  }
  const auto& kr = std::get<Kron>(rep_);
  const Matrix q = kron(kr.g_vectors, kr.a_vectors);
  const Eigen::Map<const Vector> ev(kr.eigen_precision.data(), kr.eigen_precision.size());
  return q * ev.cwiseInverse().asDiagonal() * q.transpose();
}

std::vector<Vector> LaplacePosterior::sample(Rng& rng, std::size_t count) const {
  std::vector<Vector> out;
  out.reserve(count);
  Vector z(dim());
  for (std::size_t s = 0; s < count; ++s) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    if (const auto* full = std::get_if<Full>(&rep_)) {
      // P = L L^T, Sigma = L^{-T} L^{-1}: theta = mean + L^{-T} z.
      out.emplace_back(mean_ + full->precision_chol.transpose().triangularView<Eigen::Upper>().solve(z));
    } else if (const auto* diag = std::get_if<Diag>(&rep_)) {
      out.emplace_back(mean_.array() + z.array() / diag->precision.array().sqrt());
    } else {
      const auto& kr = std::get<Kron>(rep_);
      const Eigen::Index rows = kr.g_vectors.rows();
      const Eigen::Index cols = kr.a_vectors.rows();
      const Eigen::Map<const Matrix> zm(z.data(), rows, cols);
      const Matrix scaled = zm.array() / kr.eigen_precision.array().sqrt();
      const Matrix delta = kr.g_vectors * scaled * kr.a_vectors.transpose();
      out.emplace_back(mean_ + Eigen::Map<const Vector>(delta.data(), delta.size()));
    }
  }
  return out;
}

std::vector<Vector> sample_params(const LaplacePosterior& post, Rng& rng, std::size_t count) {
  return post.sample(rng, count);
}

Matrix linearized_variance_batch(const Network& net, const LaplacePosterior& post,
                                 const Matrix& x) {
  const Eigen::Index k = net.output_dim();
  Matrix var(x.rows(), k);
  if (post.subset() == Subset::last_layer) {
    if (post.dim() != last_layer_dim(net)) {
      throw DimensionMismatch("linearized_variance: posterior does not match the last layer");
    }
    const Matrix feats = last_layer_features(net, x);
    const Eigen::Index n = feats.cols();
    Vector g = Vector::Zero(post.dim());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index i = 0; i < k; ++i) {
        g.setZero();
        g.segment(i * n, n) = feats.row(r).transpose();
        var(r, i) = post.quadratic_form(g);
      }
    }
    return var;
  }
  if (post.dim() != net.parameter_count()) {
    throw DimensionMismatch("linearized_variance: posterior does not match the network");
  }
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t r) {
    const auto row = static_cast<Eigen::Index>(r);
    const Matrix jac = output_jacobian(net, x.row(row).transpose());
    for (Eigen::Index i = 0; i < k; ++i) var(row, i) = post.quadratic_form(jac.row(i).transpose());
  });
  return var;
}

Vector linearized_variance(const Network& net, const LaplacePosterior& post, const Vector& x) {
  return linearized_variance_batch(net, post, x.transpose()).row(0).transpose();
}

double probit_predict_binary(double f_map, double variance) {
  if (variance < 0.0) throw InvalidArgument("probit_predict_binary: negative variance");
  return logistic(f_map / std::sqrt(1.0 + std::numbers::pi / 8.0 * variance));
}

std::vector<Matrix> sample_outputs(const Network& net, const LaplacePosterior& post,
                                   const Matrix& x, Rng& rng, std::size_t count) {
  const auto samples = post.sample(rng, count);
  std::vector<Matrix> outputs;
  outputs.reserve(count);
  if (post.subset() == Subset::last_layer) {
    const Matrix feats = last_layer_features(net, x);
    const Eigen::Index k = net.output_dim();
    for (const auto& theta : samples) {
      const Eigen::Map<const Matrix> w(theta.data(), k, feats.cols());
      outputs.emplace_back(feats * w.transpose());
    }
    return outputs;
  }
  Network copy = net;
  for (const auto& theta : samples) {
    copy.unflatten(theta);
    outputs.push_back(predict(copy, x));
  }
  return outputs;
}

Prediction mc_predict(const Network& net, const LaplacePosterior& post, const Matrix& x,
                      const PredictConfig& config, const LossKind& loss) {
  if (config.samples < 1) throw InvalidArgument("mc_predict: need at least one sample");
  Rng rng(config.seed);
  const auto outputs = sample_outputs(net, post, x, rng, config.samples);
  const double inv_s = 1.0 / static_cast<double>(config.samples);
  Prediction pred;
  if (loss.is_classification()) {
    const bool binary = loss.kind == LossKind::Kind::binary_ce;
    const Eigen::Index classes = binary ? 2 : net.output_dim();
    pred.probs = Matrix::Zero(x.rows(), classes);
    for (const auto& f : outputs) {
      if (binary) {
        for (Eigen::Index r = 0; r < f.rows(); ++r) {
          const double p = logistic(f(r, 0));
          pred.probs(r, 0) += 1.0 - p;
          pred.probs(r, 1) += p;
        }
      } else {
        pred.probs += softmax_rows(f);
      }
    }
    pred.probs *= inv_s;
    return pred;
  }
  pred.mean = Matrix::Zero(x.rows(), net.output_dim());
  Matrix second = Matrix::Zero(x.rows(), net.output_dim());
  for (const auto& f : outputs) {
    pred.mean += f;
    second.array() += f.array().square();
  }
  pred.mean *= inv_s;
  pred.epistemic_var = (second * inv_s - pred.mean.cwiseProduct(pred.mean)).cwiseMax(0.0);
  pred.total_var = pred.epistemic_var.array() + 1.0 / loss.noise_precision;
  return pred;
}

Prediction predictive(const Network& net, const LaplacePosterior& post, const Matrix& x,
                      const PredictConfig& config, const LossKind& loss) {
  if (config.method == PredictConfig::Method::mc) return mc_predict(net, post, x, config, loss);
  if (loss.kind == LossKind::Kind::categorical_ce) {
    throw InvalidArgument("probit_linearized prediction supports binary classification and regression only");
  }
  const Matrix f = predict(net, x);
  const Matrix var = linearized_variance_batch(net, post, x);
  Prediction pred;
  if (loss.kind == LossKind::Kind::binary_ce) {
    pred.probs.resize(x.rows(), 2);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double p = probit_predict_binary(f(r, 0), std::max(0.0, var(r, 0)));
      pred.probs(r, 0) = 1.0 - p;
      pred.probs(r, 1) = p;
    }
    return pred;
  }
  pred.mean = f;
  pred.epistemic_var = var.cwiseMax(0.0);
  pred.total_var = pred.epistemic_var.array() + 1.0 / loss.noise_precision;
  return pred;
}

double predictive_log_likelihood(const Prediction& pred, const Dataset& data,
                                 const LossKind& loss) {
  if (data.size() == 0) throw InvalidArgument("predictive_log_likelihood: empty dataset");
  double total = 0.0;
  if (loss.is_classification()) {
    for (Eigen::Index r = 0; r < data.size(); ++r) {
      const double p = pred.probs(r, data.labels[static_cast<std::size_t>(r)]);
      total += std::log(std::max(p, 1e-300));
    }
  } else {
    for (Eigen::Index r = 0; r < data.size(); ++r) {
      for (Eigen::Index c = 0; c < data.targets.cols(); ++c) {
        const double var = pred.total_var(r, c);
        const double diff = data.targets(r, c) - pred.mean(r, c);
        total += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * diff * diff / var;
      }
    }
  }
  return total / static_cast<double>(data.size());
}

std::vector<double> default_prior_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 16; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.5 * i));
  return grid;
}

std::size_t select_candidate(const std::vector<TuneCandidate>& candidates, bool maximize) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i].ok) continue;
    if (!best) {
      best = i;
      continue;
    }
    const double s = candidates[i].score;
    const double b = candidates[*best].score;
    if (maximize ? s > b : s < b) best = i;
  }
  if (!best) throw NotPositiveDefinite("no candidate produced a valid posterior");
  return *best;
}

TuneResult tune_prior_precision(const Network& net, const Curvature& curvature,
                                const Vector& mean, const Dataset& val, TuneObjective objective,
                                const std::vector<double>& grid, const PredictConfig& config,
                                const LossKind& loss, const Dataset* out_data) {
  if (grid.empty()) throw InvalidArgument("tune_prior_precision: empty grid");
  if (objective == TuneObjective::ood_mmc) {
    if (!out_data) throw InvalidArgument("tune_prior_precision: ood_mmc needs outlier data");
    if (!loss.is_classification()) throw InvalidArgument("ood_mmc tuning needs a classifier");
  }
  TuneResult result;
  for (double lambda : grid) {
    TuneCandidate cand{lambda, 0.0, false};
    try {
      const LaplacePosterior post = build_posterior(curvature, mean, lambda);
      if (objective == TuneObjective::val_log_likelihood) {
        const Prediction pred = predictive(net, post, val.features, config, loss);
        cand.score = predictive_log_likelihood(pred, val, loss);
      } else {
        const Prediction in = predictive(net, post, val.features, config, loss);
        const Prediction out = predictive(net, post, out_data->features, config, loss);
        const double k = static_cast<double>(in.probs.cols());
        cand.score = std::abs(1.0 - mmc(in.probs)) + std::abs(1.0 / k - mmc(out.probs));
      }
      cand.ok = std::isfinite(cand.score);
    } catch (const NotPositiveDefinite&) {
      cand.ok = false;
    }
    result.candidates.push_back(cand);
  }
  const std::size_t best =
      select_candidate(result.candidates, objective == TuneObjective::val_log_likelihood);
  result.best = result.candidates[best].prior_precision;
  return result;
}

}  // namespace lula
