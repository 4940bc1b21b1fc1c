#include "lula/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "lula/cli/demo.hpp"
#include "lula/metrics.hpp"

namespace lula::cli {
namespace {

std::filesystem::path sibling(const std::filesystem::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + suffix);
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::string history_csv(const std::vector<double>& history) {
  std::string text = "epoch,objective\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    text += std::to_string(e + 1) + ',' + format_number(history[e]) + '\n';
  }
  return text;
}

Network load_checked(const std::filesystem::path& path, const PreparedData& data) {
  Network net = load_network(path);
  check_compatible(net, data.train, data.loss);
  return net;
}

struct PriorChoice {
  double value = 0.0;
  bool tuned = false;
  std::optional<TuneResult> tuning;
};

PriorChoice choose_prior(const ExperimentConfig& config, const Network& net,
                         const PreparedData& data, const Curvature& curv) {
  if (config.laplace.prior_precision) return {*config.laplace.prior_precision, false, std::nullopt};
  std::optional<Dataset> out;
  if (config.laplace.objective == TuneObjective::ood_mmc) {
    const OutlierConfig& o = config.lula.outliers;
    out = make_outliers(o.kind, data.val, o.count, o.low, o.high, config.lula.train.seed ^ 0x77ULL);
  }
  TuneResult tuning = tune_prior_precision(net, curv, subset_params(net, curv.subset), data.val,
                                           config.laplace.objective, config.laplace.prior_grid,
                                           config.laplace.predict, data.loss, out ? &*out : nullptr);
  const double best = tuning.best;
  return {best, true, std::move(tuning)};
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

Stat summarize(const std::vector<double>& values) {
  Stat s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(values.size()));
  return s;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  const DataConfig& dc = config.data;
  Dataset all;
  if (dc.source == "two_moons") {
    all = gen_two_moons(dc.size, dc.noise, dc.seed);
  } else if (dc.source == "toy_regression") {
    all = gen_toy_regression(dc.size, dc.x_low, dc.x_high, dc.noise, dc.seed);
  } else {
    all = load_csv(dc.csv_path, dc.csv);
  }
  Splits sp = split(all, dc.split);
  PreparedData out;
  if (dc.standardize) {
    StandardizedSplit st = standardize(sp.train, {sp.val, sp.test});
    out.train = std::move(st.train);
    out.val = std::move(st.others[0]);
    out.test = std::move(st.others[1]);
  } else {
    out.train = std::move(sp.train);
    out.val = std::move(sp.val);
    out.test = std::move(sp.test);
  }

  const bool classification = out.train.task == Task::classification;
  std::string likelihood = config.model.likelihood;
  if (likelihood == "auto") likelihood = classification ? "categorical" : "gaussian";
  Eigen::Index outputs = 0;
  if (likelihood == "gaussian") {
    if (classification) throw ConfigError("model.likelihood = gaussian needs a regression task");
    out.loss = LossKind::gaussian(config.model.noise_precision);
    outputs = out.train.targets.cols();
  } else {
    if (!classification) throw ConfigError("model.likelihood = " + likelihood + " needs a classification task");
    if (likelihood == "binary") {
      if (out.train.num_classes != 2) throw ConfigError("model.likelihood = binary needs exactly two classes");
      out.loss = LossKind::binary();
      outputs = 1;
    } else {
      out.loss = LossKind::categorical();
      outputs = out.train.num_classes;
    }
  }
  out.dims.push_back(out.train.dim());
  out.dims.insert(out.dims.end(), config.model.hidden.begin(), config.model.hidden.end());
  out.dims.push_back(outputs);
  return out;
}

Dataset make_outliers(std::string_view kind, const Dataset& reference, std::size_t count,
                      double low, double high, std::uint64_t seed) {
  if (kind == "uniform_noise") {
    const std::size_t m = count == 0 ? static_cast<std::size_t>(reference.size()) : count;
    return gen_uniform_noise(m, static_cast<std::size_t>(reference.dim()), low, high, seed);
  }
  const OodKind ood = ood_kind_from_string(kind);
  Rng rng(seed);
  if (count == 0 || count == static_cast<std::size_t>(reference.size())) {
    return synthesize_ood(reference, ood, rng);
  }
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = i % static_cast<std::size_t>(reference.size());
  return synthesize_ood(reference.subset(rows), ood, rng);
}

void cmd_train(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream& log) {
  const PreparedData data = prepare_data(config);
  Rng rng(config.train.seed);
  const Network init = init_network(data.dims, config.model.activation, rng);
  const TrainResult result = train_map(init, data.train, data.loss, config.train);
  ensure_parent(out);
  save_network(result.net, out);
  write_text(sibling(out, ".history.csv"), history_csv(result.history));
  log << "trained " << init.parameter_count() << " parameters for " << config.train.epochs
      << " epochs; final objective " << format_number(result.history.back()) << '\n';
  if (data.loss.is_classification()) {
    log << "train accuracy " << format_number(accuracy(result.net, data.train)) << ", test accuracy "
        << format_number(accuracy(result.net, data.test)) << '\n';
  }
  log << "wrote " << out.string() << '\n';
}

void cmd_laplace(const ExperimentConfig& config, const std::filesystem::path& model,
                 const std::filesystem::path& out, std::ostream& log) {
  const PreparedData data = prepare_data(config);
  const Network net = load_checked(model, data);
  const Curvature curv =
      fit_curvature(net, data.train, data.loss, config.laplace.curvature, config.laplace.subset);
  const PriorChoice prior = choose_prior(config, net, data, curv);
  const Vector mean = subset_params(net, curv.subset);

  std::string text;
  text += "model = " + model.string() + '\n';
  text += "curvature = " + std::string(to_string(curv.kind)) + '\n';
  text += "subset = " + std::string(to_string(curv.subset)) + '\n';
  text += "parameter_count = " + std::to_string(curv.dim()) + '\n';
  text += "data_count = " + std::to_string(curv.data_count) + '\n';
  text += "prior_precision = " + format_number(prior.value) + '\n';
  text += std::string("tuned = ") + (prior.tuned ? "true" : "false") + '\n';
  if (prior.tuned) {
    text += "objective = " + std::string(to_string(config.laplace.objective)) + '\n';
    // Log-likelihood of every grid point, whatever the tuning objective.
    const TuneResult ll = config.laplace.objective == TuneObjective::val_log_likelihood
                              ? *prior.tuning
                              : tune_prior_precision(net, curv, mean, data.val,
                                                     TuneObjective::val_log_likelihood,
                                                     config.laplace.prior_grid, config.laplace.predict,
                                                     data.loss);
    for (std::size_t i = 0; i < prior.tuning->candidates.size(); ++i) {
      const auto& c = prior.tuning->candidates[i];
      const std::string key = "grid." + std::to_string(i) + '.';
      text += key + "prior_precision = " + format_number(c.prior_precision) + '\n';
      text += key + "ok = " + (c.ok ? "true" : "false") + '\n';
      if (c.ok) text += key + "score = " + format_number(c.score) + '\n';
      if (ll.candidates[i].ok) {
        text += key + "val_log_likelihood = " + format_number(ll.candidates[i].score) + '\n';
      }
    }
  }
  const LaplacePosterior post = build_posterior(curv, mean, prior.value);
  text += "jitter = " + format_number(post.jitter()) + '\n';
  const Prediction val = predictive(net, post, data.val.features, config.laplace.predict, data.loss);
  text += "val_log_likelihood = " + format_number(predictive_log_likelihood(val, data.val, data.loss)) + '\n';
  write_text(out, text);
  log << "prior precision " << format_number(prior.value) << (prior.tuned ? " (tuned)" : "")
      << "; wrote " << out.string() << '\n';
}

void cmd_lula(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out, std::ostream& log) {
  const PreparedData data = prepare_data(config);
  const Network map_net = load_checked(model, data);
  if (map_net.depth() < 2) throw ConfigError("LULA needs a model with at least one hidden layer");
  const Curvature curv = fit_curvature(map_net, data.train, data.loss, config.laplace.curvature,
                                       Subset::last_layer);
  const double prior = choose_prior(config, map_net, data, curv).value;
  const OutlierConfig& o = config.lula.outliers;
  const Dataset outliers = make_outliers(o.kind, data.val, o.count, o.low, o.high,
                                         Rng(config.lula.train.seed).derive(1).next_u64());

  Eigen::Index units = 0;
  std::string grid_csv;
  if (config.lula.units) {
    units = *config.lula.units;
  } else {
    if (!data.loss.is_classification()) {
      throw ConfigError("lula.units = grid needs a classification task");
    }
    GridSearchConfig gs;
    gs.eval_curvature = config.laplace.curvature;
    gs.predict = config.laplace.predict;
    gs.init_std = config.lula.init_std;
    gs.seed = config.lula.train.seed;
    const GridSearchResult grid = grid_search_units(map_net, config.lula.unit_grid, data.train,
                                                    data.val, outliers, data.loss, prior,
                                                    config.lula.train, gs);
    for (const auto& w : grid.warnings) log << "warning: " << w << '\n';
    grid_csv = "units,score,ok\n";
    for (const auto& s : grid.scores) {
      grid_csv += std::to_string(s.units) + ',' + format_number(s.score) + ',' + (s.ok ? "1" : "0") + '\n';
    }
    units = grid.best;
    log << "grid search selected " << units << " units\n";
  }

  // Same stream as grid_search_units, so a searched candidate retrains identically.
  Rng rng = Rng(config.lula.train.seed).derive(static_cast<std::uint64_t>(units));
  const Augmented augmented = augment(map_net, penultimate_counts(map_net, units), rng, config.lula.init_std);
  const LulaTrainResult trained = train_lula(augmented.net, augmented.aug, data.val, outliers,
                                             data.loss, prior, config.lula.train, &data.train);

  const bool structure_ok = verify_structure(map_net, trained.net, augmented.aug);
  Rng check_rng(config.lula.train.seed ^ 0xc0ffeeULL);
  const double gap = output_preservation_gap(map_net, trained.net, check_rng, 100);
  const Matrix probe = predict(map_net, Matrix::Constant(1, map_net.input_dim(), 3.0));
  const double tolerance = 1e-12 * std::max(1.0, probe.cwiseAbs().maxCoeff());
  log << "output preservation check on 100 random inputs: max |f_lula - f_map| = " << format_number(gap)
      << ", structure " << (structure_ok ? "intact" : "BROKEN") << " -> "
      << (structure_ok && gap <= tolerance ? "PASS" : "FAIL") << '\n';

  ensure_parent(out);
  save_network(trained.net, out);
  save_augmentation(augmented.aug, sibling(out, ".aug.txt"));
  write_text(sibling(out, ".history.csv"), history_csv(trained.history));
  if (!grid_csv.empty()) write_text(sibling(out, ".grid.csv"), grid_csv);
  if (!structure_ok || gap > tolerance) {
    throw NumericError("LULA network does not reproduce the MAP outputs (gap " + format_number(gap) + ")");
  }
  log << "trained " << units << " LULA units with prior precision " << format_number(prior) << " for "
      << trained.history.size() << " epochs; objective " << format_number(trained.history.front())
      << " -> " << format_number(trained.history.back()) << "\nwrote " << out.string() << '\n';
}

void cmd_eval(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out, std::ostream& log) {
  const PreparedData data = prepare_data(config);
  const Network net = load_checked(model, data);
  const Curvature curv =
      fit_curvature(net, data.train, data.loss, config.laplace.curvature, config.laplace.subset);
  const PriorChoice prior = choose_prior(config, net, data, curv);
  const LaplacePosterior post = build_posterior(curv, subset_params(net, curv.subset), prior.value);
  const bool classify = data.loss.is_classification();

  std::vector<std::pair<std::string, Dataset>> ood;
  for (std::size_t i = 0; i < config.eval.ood.size(); ++i) {
    const std::string& kind = config.eval.ood[i];
    ood.emplace_back(kind, make_outliers(kind, data.test, 0, config.eval.noise_low, config.eval.noise_high,
                                         Rng(config.eval.seed).derive(i).next_u64()));
  }

  // metric rows keyed by (set, metric), one value per repeat.
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  auto record = [&](const std::string& key, double value) {
    for (auto& r : rows) {
      if (r.first == key) {
        r.second.push_back(value);
        return;
      }
    }
    rows.push_back({key, {value}});
  };

  const Rng repeat_base(config.eval.seed ^ 0xe7a1ULL);
  for (std::size_t r = 0; r < config.eval.repeats; ++r) {
    PredictConfig pc = config.laplace.predict;
    pc.seed = repeat_base.derive(r).next_u64();
    const Prediction test = predictive(net, post, data.test.features, pc, data.loss);
    if (classify) {
      const Vector conf_test = max_confidence(test.probs);
      const std::vector<double> in_conf(conf_test.data(), conf_test.data() + conf_test.size());
      record("test,mmc", mmc(test.probs));
      record("test,brier", brier(test.probs, data.test.labels));
      record("test,log_likelihood", predictive_log_likelihood(test, data.test, data.loss));
      for (const auto& [name, set] : ood) {
        const Prediction p = predictive(net, post, set.features, pc, data.loss);
        const Vector conf = max_confidence(p.probs);
        record(name + ",mmc", mmc(p.probs));
        record(name + ",aur", auroc(in_conf, std::vector<double>(conf.data(), conf.data() + conf.size())));
      }
    } else {
      record("test,mean_std", test.total_var.array().sqrt().mean());
      record("test,rmse", std::sqrt((test.mean - data.test.targets).array().square().mean()));
      record("test,log_likelihood", predictive_log_likelihood(test, data.test, data.loss));
      for (const auto& [name, set] : ood) {
        const Prediction p = predictive(net, post, set.features, pc, data.loss);
        record(name + ",mean_std", p.total_var.array().sqrt().mean());
      }
    }
  }

  std::string csv = "set,metric,mean,std\n";
  std::string summary;
  summary += "model = " + model.string() + '\n';
  summary += "curvature = " + std::string(to_string(curv.kind)) + '\n';
  summary += "subset = " + std::string(to_string(curv.subset)) + '\n';
  summary += "prior_precision = " + format_number(prior.value) + '\n';
  summary += "method = " + std::string(to_string(config.laplace.predict.method)) + '\n';
  summary += "samples = " + std::to_string(config.laplace.predict.samples) + '\n';
  summary += "repeats = " + std::to_string(config.eval.repeats) + '\n';
  if (classify) {
    const Matrix map_out = predict(net, data.test.features);
    Matrix map_probs;
    if (data.loss.kind == LossKind::Kind::binary_ce) {
      map_probs.resize(map_out.rows(), 2);
      for (Eigen::Index i = 0; i < map_out.rows(); ++i) {
        map_probs(i, 1) = logistic(map_out(i, 0));
        map_probs(i, 0) = 1.0 - map_probs(i, 1);
      }
    } else {
      map_probs = softmax_rows(map_out);
    }
    summary += "map.test.mmc = " + format_number(mmc(map_probs)) + '\n';
    summary += "map.test.accuracy = " + format_number(accuracy(net, data.test)) + '\n';
  }
  for (const auto& [key, values] : rows) {
    const Stat s = summarize(values);
    csv += key + ',' + format_number(s.mean) + ',' + format_number(s.std) + '\n';
    std::string dotted = key;
    dotted[dotted.find(',')] = '.';
    summary += dotted + ".mean = " + format_number(s.mean) + '\n';
    summary += dotted + ".std = " + format_number(s.std) + '\n';
    log << key << ": " << format_number(s.mean) << " +- " << format_number(s.std) << '\n';
  }
  write_text(out, csv);
  write_text(sibling(out, ".summary.txt"), summary);
  log << "wrote " << out.string() << '\n';
}

void cmd_demo_toy(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                  std::ostream& log) {
  const MoonsDemoResult moons = run_moons_demo(config);
  const RegressionDemoResult regression = run_regression_demo(config);
  const auto files = write_demo_outputs(moons, regression, out_dir);
  for (std::size_t s = 0; s < 3; ++s) {
    log << kStageNames[s] << ": moons far-field MMC " << format_number(moons.ring_mmc[s])
        << ", moons test MMC " << format_number(moons.test_mmc[s]) << ", regression outlier std "
        << format_number(regression.outlier_std[s]) << ", regression test std "
        << format_number(regression.test_std[s]) << '\n';
  }
  log << "wrote " << files.size() << " files to " << out_dir.string() << '\n';
}

int run_command(std::string_view command, const CommandOptions& options, std::ostream& log,
                std::ostream& err) {
  try {
    ExperimentConfig config = load_config(options.config);
    if (options.seed) override_seed(config, *options.seed);
    auto require_model = [&]() {
      if (!options.model) throw ConfigError(std::string(command) + " requires --model");
      return *options.model;
    };
    if (command == "train") {
      cmd_train(config, options.out.value_or("model.txt"), log);
    } else if (command == "laplace") {
      cmd_laplace(config, require_model(), options.out.value_or("laplace.txt"), log);
    } else if (command == "lula") {
      cmd_lula(config, require_model(), options.out.value_or("lula_model.txt"), log);
    } else if (command == "eval") {
      cmd_eval(config, require_model(), options.out.value_or("eval.csv"), log);
    } else if (command == "demo-toy") {
      cmd_demo_toy(config, options.out.value_or("demo_out"), log);
    } else {
      throw ConfigError("unknown command '" + std::string(command) + "'");
    }
    return kSuccess;
  } catch (const ConfigError& e) {
    err << "lula-lab: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "lula-lab: " << command << " failed: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace lula::cli
