#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "lula/cli/commands.hpp"
#include "lula/error.hpp"
#include "lula/laplace.hpp"
#include "lula/lula.hpp"
#include "lula/metrics.hpp"

namespace py = pybind11;
using namespace lula;

namespace {

LossKind make_loss(const std::string& likelihood, double noise_precision) {
  const LossKind::Kind kind = loss_kind_from_string(likelihood);
  if (kind == LossKind::Kind::gaussian_nll) return LossKind::gaussian(noise_precision);
  return kind == LossKind::Kind::binary_ce ? LossKind::binary() : LossKind::categorical();
}

// Features plus either integer labels (classification) or a target matrix.
Dataset make_dataset(const Matrix& x, const py::object& y, const LossKind& loss) {
  Dataset d;
  d.features = x;
  if (y.is_none()) return d;
  if (loss.is_classification()) {
    d.task = Task::classification;
    d.labels = y.cast<std::vector<int>>();
    d.num_classes = loss.kind == LossKind::Kind::binary_ce ? 2 : 0;
    for (int label : d.labels) d.num_classes = std::max(d.num_classes, label + 1);
  } else {
    d.task = Task::regression;
    d.targets = y.cast<Matrix>();
    if (d.targets.cols() == x.rows() && d.targets.rows() == 1 && x.rows() != 1) d.targets.transposeInPlace();
  }
  d.validate();
  return d;
}

py::tuple dataset_tuple(const Dataset& d) {
  if (d.task == Task::classification) return py::make_tuple(d.features, d.labels);
  return py::make_tuple(d.features, d.targets);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Laplace approximations with LULA units";

  py::register_exception<Error>(m, "LulaError", PyExc_RuntimeError);

  py::class_<Network>(m, "Network")
      .def_property_readonly("dims", &Network::dims)
      .def_property_readonly("depth", &Network::depth)
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def("flatten", &Network::flatten)
      .def("predict", [](const Network& net, const Matrix& x) { return predict(net, x); }, py::arg("x"))
      .def("save", [](const Network& net, const std::filesystem::path& p) { save_network(net, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_network(p); })
      .def("__repr__", [](const Network& net) {
        std::ostringstream s;
        s << "Network(dims=[";
        const auto dims = net.dims();
        for (std::size_t i = 0; i < dims.size(); ++i) s << (i ? ", " : "") << dims[i];
        s << "])";
        return s.str();
      });

  m.def(
      "two_moons",
      [](std::size_t size, double noise, std::uint64_t seed) { return dataset_tuple(gen_two_moons(size, noise, seed)); },
      py::arg("size"), py::arg("noise") = 0.1, py::arg("seed") = 0, "Returns (features, labels).");
  m.def(
      "toy_regression",
      [](std::size_t size, double x_low, double x_high, double noise, std::uint64_t seed) {
        return dataset_tuple(gen_toy_regression(size, x_low, x_high, noise, seed));
      },
      py::arg("size"), py::arg("x_low") = -3.0, py::arg("x_high") = 3.0, py::arg("noise") = 0.1,
      py::arg("seed") = 0, "Returns (features, targets).");
  m.def(
      "uniform_noise",
      [](std::size_t size, std::size_t dim, double low, double high, std::uint64_t seed, double scale) {
        return gen_uniform_noise(size, dim, low, high, seed, scale).features;
      },
      py::arg("size"), py::arg("dim"), py::arg("low"), py::arg("high"), py::arg("seed") = 0,
      py::arg("scale") = 1.0);

  m.def(
      "train_map",
      [](const Matrix& x, const py::object& y, const std::vector<Eigen::Index>& hidden,
         const std::string& likelihood, const std::string& activation, int epochs, double learning_rate,
         std::size_t batch_size, double weight_decay, double noise_precision, std::uint64_t seed) {
        const LossKind loss = make_loss(likelihood, noise_precision);
        const Dataset data = make_dataset(x, y, loss);
        std::vector<Eigen::Index> dims{x.cols()};
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        if (loss.kind == LossKind::Kind::gaussian_nll) {
          dims.push_back(data.targets.cols());
        } else {
          dims.push_back(loss.kind == LossKind::Kind::binary_ce ? 1 : data.num_classes);
        }
        Rng rng(seed);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = learning_rate;
        cfg.batch_size = batch_size;
        cfg.weight_decay = weight_decay;
        cfg.seed = seed;
        const TrainResult r = train_map(init_network(dims, activation_from_string(activation), rng), data, loss, cfg);
        return py::make_tuple(r.net, r.history);
      },
      py::arg("x"), py::arg("y"), py::arg("hidden"), py::arg("likelihood") = "categorical",
      py::arg("activation") = "relu", py::arg("epochs") = 100, py::arg("learning_rate") = 1e-3,
      py::arg("batch_size") = 32, py::arg("weight_decay") = 0.0, py::arg("noise_precision") = 1.0,
      py::arg("seed") = 0, "Trains a MAP network; returns (network, per-epoch objective).");

  py::class_<LaplacePosterior>(m, "Posterior")
      .def_property_readonly("dim", &LaplacePosterior::dim)
      .def_property_readonly("prior_precision", &LaplacePosterior::prior_precision)
      .def_property_readonly("mean", &LaplacePosterior::mean)
      .def_property_readonly("jitter", &LaplacePosterior::jitter)
      .def("marginal_variances", &LaplacePosterior::marginal_variances)
      .def("covariance", &LaplacePosterior::covariance)
      .def("quadratic_form", &LaplacePosterior::quadratic_form)
      .def(
          "sample",
          [](const LaplacePosterior& post, std::size_t count, std::uint64_t seed) {
            Rng rng(seed);
            return post.sample(rng, count);
          },
          py::arg("count"), py::arg("seed") = 0);

  m.def(
      "fit_laplace",
      [](const Network& net, const Matrix& x, const py::object& y, double prior_precision,
         const std::string& likelihood, const std::string& curvature, const std::string& subset,
         double noise_precision) {
        const LossKind loss = make_loss(likelihood, noise_precision);
        return fit_laplace(net, make_dataset(x, y, loss), loss, curvature_kind_from_string(curvature),
                           subset_from_string(subset), prior_precision);
      },
      py::arg("net"), py::arg("x"), py::arg("y"), py::arg("prior_precision") = 1.0,
      py::arg("likelihood") = "categorical", py::arg("curvature") = "kfac_last_layer",
      py::arg("subset") = "last_layer", py::arg("noise_precision") = 1.0);

  m.def(
      "predictive",
      [](const Network& net, const LaplacePosterior& post, const Matrix& x, const std::string& likelihood,
         const std::string& method, std::size_t samples, std::uint64_t seed, double noise_precision) {
        PredictConfig cfg;
        cfg.method = predict_method_from_string(method);
        cfg.samples = samples;
        cfg.seed = seed;
        const LossKind loss = make_loss(likelihood, noise_precision);
        const Prediction p = predictive(net, post, x, cfg, loss);
        py::dict out;
        if (loss.is_classification()) {
          out["probs"] = p.probs;
        } else {
          out["mean"] = p.mean;
          out["epistemic_var"] = p.epistemic_var;
          out["total_var"] = p.total_var;
        }
        return out;
      },
      py::arg("net"), py::arg("posterior"), py::arg("x"), py::arg("likelihood") = "categorical",
      py::arg("method") = "mc", py::arg("samples") = 100, py::arg("seed") = 0, py::arg("noise_precision") = 1.0);

  m.def("linearized_variance", &linearized_variance_batch, py::arg("net"), py::arg("posterior"), py::arg("x"));
  m.def("probit_predict_binary", &probit_predict_binary, py::arg("f_map"), py::arg("variance"));

  py::class_<LulaAugmentation>(m, "Augmentation")
      .def_readonly("unit_counts", &LulaAugmentation::unit_counts)
      .def_readonly("original_dims", &LulaAugmentation::original_dims)
      .def_readonly("init_std", &LulaAugmentation::init_std)
      .def("free_count", &LulaAugmentation::free_count)
      .def("flat_mask", &LulaAugmentation::flat_mask)
      .def("save", [](const LulaAugmentation& a, const std::filesystem::path& p) { save_augmentation(a, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_augmentation(p); });

  m.def(
      "augment",
      [](const Network& net, const std::vector<Eigen::Index>& counts, std::uint64_t seed,
         std::optional<double> init_std) {
        Rng rng(seed);
        Augmented a = augment(net, counts, rng, init_std);
        return py::make_tuple(a.net, a.aug);
      },
      py::arg("net"), py::arg("counts"), py::arg("seed") = 0, py::arg("init_std") = py::none(),
      "Adds units per hidden layer; returns (network, augmentation).");
  m.def("penultimate_counts", &penultimate_counts, py::arg("net"), py::arg("units"));
  m.def("verify_structure", &verify_structure, py::arg("original"), py::arg("augmented"), py::arg("augmentation"));

  m.def(
      "train_lula",
      [](const Network& net, const LulaAugmentation& aug, const Matrix& x_in, const py::object& y_in,
         const Matrix& x_out, double prior_precision, const std::string& likelihood, int epochs,
         double learning_rate, const std::string& gradient, std::size_t in_batch, std::size_t out_batch,
         std::uint64_t seed, double noise_precision) {
        const LossKind loss = make_loss(likelihood, noise_precision);
        const Dataset in = make_dataset(x_in, y_in, loss);
        Dataset out;
        out.features = x_out;
        out.role = Role::out;
        LulaTrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = learning_rate;
        cfg.gradient = gradient_method_from_string(gradient);
        cfg.in_batch = in_batch;
        cfg.out_batch = out_batch;
        cfg.seed = seed;
        LulaTrainResult r = train_lula(net, aug, in, out, loss, prior_precision, cfg);
        return py::make_tuple(r.net, r.history);
      },
      py::arg("net"), py::arg("augmentation"), py::arg("x_in"), py::arg("y_in"), py::arg("x_out"),
      py::arg("prior_precision") = 1.0, py::arg("likelihood") = "categorical", py::arg("epochs") = 20,
      py::arg("learning_rate") = 1e-2, py::arg("gradient") = "finite_difference", py::arg("in_batch") = 0,
      py::arg("out_batch") = 0, py::arg("seed") = 0, py::arg("noise_precision") = 1.0,
      "Trains the free LULA parameters; returns (network, per-epoch objective).");

  m.def("mmc", &mmc, py::arg("probs"));
  m.def("auroc", &auroc, py::arg("in_conf"), py::arg("out_conf"));
  m.def("brier", &brier, py::arg("probs"), py::arg("labels"));

  m.def(
      "run_command",
      [](const std::string& command, const std::filesystem::path& config,
         std::optional<std::filesystem::path> model, std::optional<std::filesystem::path> out,
         std::optional<std::uint64_t> seed) {
        std::ostringstream log;
        std::ostringstream err;
        const int code = cli::run_command(command, {config, model, out, seed}, log, err);
        return py::make_tuple(code, log.str(), err.str());
      },
      py::arg("command"), py::arg("config"), py::arg("model") = py::none(), py::arg("out") = py::none(),
      py::arg("seed") = py::none(), "Runs a lula-lab command; returns (exit_code, log, errors).");
  m.def("reference_config", &cli::reference_config);
}
