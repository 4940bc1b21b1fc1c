#include "lula/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace lula::cli {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

// Every value parser throws std::invalid_argument; the caller adds the key name.
template <typename T>
T parse_number(const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw std::invalid_argument("not a valid number");
  }
  return out;
}

double parse_double(const std::string& v) { return parse_number<double>(v); }
std::uint64_t parse_u64(const std::string& v) { return parse_number<std::uint64_t>(v); }
std::size_t parse_size(const std::string& v) { return parse_number<std::size_t>(v); }
int parse_int(const std::string& v) { return parse_number<int>(v); }
Eigen::Index parse_index(const std::string& v) { return parse_number<Eigen::Index>(v); }

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<Eigen::Index> parse_index_list(const std::string& v) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(v)) out.push_back(parse_index(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(item));
  return out;
}

std::string parse_choice(const std::string& v, std::initializer_list<std::string_view> allowed) {
  for (auto a : allowed) {
    if (v == a) return v;
  }
  std::string list;
  for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  throw std::invalid_argument("expected one of " + list);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Key {
  std::string_view section;
  std::string_view name;
  std::string_view fallback;
  std::string_view doc;
  Setter set;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"data", "source", "two_moons", "two_moons | toy_regression | csv",
       [](auto& c, auto& v) { c.data.source = parse_choice(v, {"two_moons", "toy_regression", "csv"}); }},
      {"data", "size", "500", "points drawn by the generator before splitting",
       [](auto& c, auto& v) { c.data.size = parse_size(v); }},
      {"data", "noise", "0.1", "generator noise standard deviation",
       [](auto& c, auto& v) { c.data.noise = parse_double(v); }},
      {"data", "x_low", "-3", "toy_regression input range",
       [](auto& c, auto& v) { c.data.x_low = parse_double(v); }},
      {"data", "x_high", "3", "",
       [](auto& c, auto& v) { c.data.x_high = parse_double(v); }},
      {"data", "csv_path", "", "numeric CSV file (source = csv); relative to the working directory",
       [](auto& c, auto& v) { c.data.csv_path = v; }},
      {"data", "target_column", "target", "column name, or zero-based index without a header",
       [](auto& c, auto& v) { c.data.csv.target_column = v; }},
      {"data", "has_header", "true", "",
       [](auto& c, auto& v) { c.data.csv.has_header = parse_bool(v); }},
      {"data", "task", "regression", "csv task: regression | classification",
       [](auto& c, auto& v) {
         c.data.csv.task = parse_choice(v, {"regression", "classification"}) == "regression"
                               ? Task::regression
                               : Task::classification;
       }},
      {"data", "split", "0.6, 0.2, 0.2", "train, validation, test fractions",
       [](auto& c, auto& v) {
         const auto f = parse_double_list(v);
         if (f.size() != 3) throw std::invalid_argument("expected three fractions");
         c.data.split.train = f[0];
         c.data.split.val = f[1];
         c.data.split.test = f[2];
       }},
      {"data", "standardize", "true", "standardize features with training statistics",
       [](auto& c, auto& v) { c.data.standardize = parse_bool(v); }},
      {"data", "seed", "0", "",
       [](auto& c, auto& v) { c.data.seed = c.data.split.seed = parse_u64(v); }},

      {"model", "hidden", "64, 64", "hidden layer widths",
       [](auto& c, auto& v) { c.model.hidden = parse_index_list(v); }},
      {"model", "activation", "relu", "relu | selu | tanh | identity",
       [](auto& c, auto& v) { c.model.activation = activation_from_string(v); }},
      {"model", "likelihood", "auto", "auto | gaussian | categorical | binary",
       [](auto& c, auto& v) {
         c.model.likelihood = parse_choice(v, {"auto", "gaussian", "categorical", "binary"});
       }},
      {"model", "noise_precision", "1", "beta of the gaussian likelihood",
       [](auto& c, auto& v) { c.model.noise_precision = parse_double(v); }},

      {"train", "optimizer", "adam", "sgd | adam",
       [](auto& c, auto& v) { c.train.optimizer = optimizer_from_string(v); }},
      {"train", "learning_rate", "0.001", "",
       [](auto& c, auto& v) { c.train.learning_rate = parse_double(v); }},
      {"train", "momentum", "0.9", "sgd only",
       [](auto& c, auto& v) { c.train.momentum = parse_double(v); }},
      {"train", "epochs", "200", "",
       [](auto& c, auto& v) { c.train.epochs = parse_int(v); }},
      {"train", "batch_size", "32", "",
       [](auto& c, auto& v) { c.train.batch_size = parse_size(v); }},
      {"train", "weight_decay", "0.1", "prior precision of the MAP objective",
       [](auto& c, auto& v) { c.train.weight_decay = parse_double(v); }},
      {"train", "seed", "0", "",
       [](auto& c, auto& v) { c.train.seed = parse_u64(v); }},

      {"laplace", "curvature", "kfac_last_layer", "full_ggn | diag_ggn | kfac_last_layer",
       [](auto& c, auto& v) { c.laplace.curvature = curvature_kind_from_string(v); }},
      {"laplace", "subset", "last_layer", "all_layers | last_layer",
       [](auto& c, auto& v) { c.laplace.subset = subset_from_string(v); }},
      {"laplace", "prior_precision", "tune", "a number, or tune to grid-search it on the validation set",
       [](auto& c, auto& v) {
         if (v == "tune") {
           c.laplace.prior_precision.reset();
         } else {
           c.laplace.prior_precision = parse_double(v);
         }
       }},
      {"laplace", "objective", "val_log_likelihood", "val_log_likelihood | ood_mmc",
       [](auto& c, auto& v) { c.laplace.objective = tune_objective_from_string(v); }},
      {"laplace", "prior_grid", "", "tuning grid; empty means 10^-4 ... 10^4 in half decades",
       [](auto& c, auto& v) {
         c.laplace.prior_grid = parse_double_list(v);
         if (c.laplace.prior_grid.empty()) c.laplace.prior_grid = default_prior_grid();
       }},
      {"laplace", "method", "mc", "predictive: mc | probit_linearized",
       [](auto& c, auto& v) { c.laplace.predict.method = predict_method_from_string(v); }},
      {"laplace", "samples", "100", "Monte-Carlo samples S",
       [](auto& c, auto& v) { c.laplace.predict.samples = parse_size(v); }},
      {"laplace", "seed", "0", "",
       [](auto& c, auto& v) { c.laplace.predict.seed = parse_u64(v); }},

      {"lula", "units", "64", "units on the penultimate layer, or grid to search unit_grid",
       [](auto& c, auto& v) {
         if (v == "grid") {
           c.lula.units.reset();
         } else {
           c.lula.units = parse_index(v);
         }
       }},
      {"lula", "unit_grid", "32, 64, 128, 256, 512", "",
       [](auto& c, auto& v) { c.lula.unit_grid = parse_index_list(v); }},
      {"lula", "init_std", "default", "free-block init scale; default is 0.1 * sqrt(2 / fan_in)",
       [](auto& c, auto& v) {
         if (v == "default") {
           c.lula.init_std.reset();
         } else {
           c.lula.init_std = parse_double(v);
         }
       }},
      {"lula", "learning_rate", "0.01", "",
       [](auto& c, auto& v) { c.lula.train.learning_rate = parse_double(v); }},
      {"lula", "epochs", "20", "",
       [](auto& c, auto& v) { c.lula.train.epochs = parse_int(v); }},
      {"lula", "optimizer", "adam", "sgd | adam",
       [](auto& c, auto& v) { c.lula.train.optimizer = optimizer_from_string(v); }},
      {"lula", "variance", "linearized", "variance evaluator: linearized | mc",
       [](auto& c, auto& v) { c.lula.train.variance.evaluator = evaluator_from_string(v); }},
      {"lula", "samples", "100", "samples of the mc evaluator",
       [](auto& c, auto& v) { c.lula.train.variance.samples = parse_size(v); }},
      {"lula", "gradient", "finite_difference", "finite_difference | analytic (diag_ggn + linearized only)",
       [](auto& c, auto& v) { c.lula.train.gradient = gradient_method_from_string(v); }},
      {"lula", "curvature", "diag_ggn", "training-time posterior: full_ggn | diag_ggn | kfac_last_layer",
       [](auto& c, auto& v) { c.lula.train.curvature = curvature_kind_from_string(v); }},
      {"lula", "in_batch", "0", "inliers per epoch; 0 uses the whole validation set",
       [](auto& c, auto& v) { c.lula.train.in_batch = parse_size(v); }},
      {"lula", "out_batch", "0", "outliers per epoch; 0 uses all of them",
       [](auto& c, auto& v) { c.lula.train.out_batch = parse_size(v); }},
      {"lula", "seed", "0", "",
       [](auto& c, auto& v) { c.lula.train.seed = c.lula.train.variance.seed = parse_u64(v); }},
      {"lula", "outliers", "uniform_noise", "uniform_noise | permute | blur | contrast",
       [](auto& c, auto& v) {
         c.lula.outliers.kind = parse_choice(v, {"uniform_noise", "permute", "blur", "contrast"});
       }},
      {"lula", "outlier_count", "0", "uniform_noise points; 0 matches the validation set",
       [](auto& c, auto& v) { c.lula.outliers.count = parse_size(v); }},
      {"lula", "outlier_low", "-6", "uniform_noise box",
       [](auto& c, auto& v) { c.lula.outliers.low = parse_double(v); }},
      {"lula", "outlier_high", "6", "",
       [](auto& c, auto& v) { c.lula.outliers.high = parse_double(v); }},

      {"eval", "ood", "uniform_noise, permute", "outlier sets: uniform_noise | permute | blur | contrast",
       [](auto& c, auto& v) {
         c.eval.ood.clear();
         for (const auto& item : split_list(v)) {
           c.eval.ood.push_back(parse_choice(item, {"uniform_noise", "permute", "blur", "contrast"}));
         }
       }},
      {"eval", "noise_low", "-10", "uniform_noise box",
       [](auto& c, auto& v) { c.eval.noise_low = parse_double(v); }},
      {"eval", "noise_high", "10", "",
       [](auto& c, auto& v) { c.eval.noise_high = parse_double(v); }},
      {"eval", "repeats", "10", "prediction runs averaged per metric",
       [](auto& c, auto& v) { c.eval.repeats = parse_size(v); }},
      {"eval", "seed", "0", "",
       [](auto& c, auto& v) { c.eval.seed = parse_u64(v); }},

      {"demo", "moons_size", "500", "",
       [](auto& c, auto& v) { c.demo.moons_size = parse_size(v); }},
      {"demo", "moons_noise", "0.1", "",
       [](auto& c, auto& v) { c.demo.moons_noise = parse_double(v); }},
      {"demo", "moons_hidden", "64, 64", "",
       [](auto& c, auto& v) { c.demo.moons_hidden = parse_index_list(v); }},
      {"demo", "moons_epochs", "200", "MAP epochs",
       [](auto& c, auto& v) { c.demo.moons_epochs = parse_int(v); }},
      {"demo", "moons_learning_rate", "0.001", "",
       [](auto& c, auto& v) { c.demo.moons_learning_rate = parse_double(v); }},
      {"demo", "moons_weight_decay", "0.15", "",
       [](auto& c, auto& v) { c.demo.moons_weight_decay = parse_double(v); }},
      {"demo", "moons_prior_precision", "1", "Laplace prior precision",
       [](auto& c, auto& v) { c.demo.moons_prior_precision = parse_double(v); }},
      {"demo", "moons_units", "64", "",
       [](auto& c, auto& v) { c.demo.moons_units = parse_index(v); }},
      {"demo", "moons_lula_epochs", "300", "",
       [](auto& c, auto& v) { c.demo.moons_lula_epochs = parse_int(v); }},
      {"demo", "moons_outlier_box", "6", "training outliers uniform on [-b, b]^2",
       [](auto& c, auto& v) { c.demo.moons_outlier_box = parse_double(v); }},
      {"demo", "regression_size", "200", "",
       [](auto& c, auto& v) { c.demo.regression_size = parse_size(v); }},
      {"demo", "regression_noise", "0.1", "",
       [](auto& c, auto& v) { c.demo.regression_noise = parse_double(v); }},
      {"demo", "regression_hidden", "50", "",
       [](auto& c, auto& v) { c.demo.regression_hidden = parse_index(v); }},
      {"demo", "regression_epochs", "500", "",
       [](auto& c, auto& v) { c.demo.regression_epochs = parse_int(v); }},
      {"demo", "regression_learning_rate", "0.01", "",
       [](auto& c, auto& v) { c.demo.regression_learning_rate = parse_double(v); }},
      {"demo", "regression_weight_decay", "1", "",
       [](auto& c, auto& v) { c.demo.regression_weight_decay = parse_double(v); }},
      {"demo", "regression_prior_precision", "1", "",
       [](auto& c, auto& v) { c.demo.regression_prior_precision = parse_double(v); }},
      {"demo", "regression_units", "50", "",
       [](auto& c, auto& v) { c.demo.regression_units = parse_index(v); }},
      {"demo", "regression_lula_epochs", "40", "",
       [](auto& c, auto& v) { c.demo.regression_lula_epochs = parse_int(v); }},
      {"demo", "regression_outlier_box", "10", "outliers uniform on [-b, b] (standardized x)",
       [](auto& c, auto& v) { c.demo.regression_outlier_box = parse_double(v); }},
      {"demo", "ring_min", "8", "far-field ring radii for the moons summary",
       [](auto& c, auto& v) { c.demo.ring_min = parse_double(v); }},
      {"demo", "ring_max", "12", "",
       [](auto& c, auto& v) { c.demo.ring_max = parse_double(v); }},
      {"demo", "ring_points", "500", "",
       [](auto& c, auto& v) { c.demo.ring_points = parse_size(v); }},
      {"demo", "grid_resolution", "60", "lattice points per axis",
       [](auto& c, auto& v) { c.demo.grid_resolution = parse_size(v); }},
      {"demo", "grid_half_width", "6", "grids span [-w, w] (moons) and [-2w, 2w] standardized x (regression)",
       [](auto& c, auto& v) { c.demo.grid_half_width = parse_double(v); }},
      {"demo", "gradient", "analytic", "LULA gradient of the demo runs: analytic | finite_difference",
       [](auto& c, auto& v) { c.demo.gradient = gradient_method_from_string(v); }},
      {"demo", "seed", "0", "",
       [](auto& c, auto& v) { c.demo.seed = parse_u64(v); }},
  };
  return table;
}

const Key* find_key(std::string_view section, std::string_view name) {
  for (const auto& k : keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

bool known_section(std::string_view section) {
  for (const auto& k : keys()) {
    if (k.section == section) return true;
  }
  return false;
}

void apply(const Key& key, ExperimentConfig& config, const std::string& value,
           const std::string& where) {
  try {
    key.set(config, value);
  } catch (const std::exception& e) {
    throw ConfigError(where + "invalid value '" + value + "' for key '" + std::string(key.section) +
                      "." + std::string(key.name) + "': " + e.what());
  }
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.data.size >= 10, "data.size must be at least 10");
  require(c.data.noise >= 0.0, "data.noise must be non-negative");
  require(c.data.x_low < c.data.x_high, "data.x_low must be below data.x_high");
  require(c.data.source != "csv" || !c.data.csv_path.empty(), "data.csv_path is required for source = csv");
  require(c.data.split.train > 0 && c.data.split.val > 0 && c.data.split.test > 0 &&
              std::abs(c.data.split.train + c.data.split.val + c.data.split.test - 1.0) < 1e-9,
          "data.split must be three positive fractions summing to 1");
  for (auto h : c.model.hidden) require(h > 0, "model.hidden widths must be positive");
  require(c.model.noise_precision > 0.0, "model.noise_precision must be positive");
  require(c.train.learning_rate > 0.0, "train.learning_rate must be positive");
  require(c.train.epochs >= 1, "train.epochs must be at least 1");
  require(c.train.batch_size >= 1, "train.batch_size must be at least 1");
  require(c.train.weight_decay >= 0.0, "train.weight_decay must be non-negative");
  require(!c.laplace.prior_precision || *c.laplace.prior_precision > 0.0,
          "laplace.prior_precision must be positive");
  for (double p : c.laplace.prior_grid) require(p > 0.0, "laplace.prior_grid entries must be positive");
  require(c.laplace.predict.samples >= 1, "laplace.samples must be at least 1");
  require(!c.lula.units || *c.lula.units >= 1, "lula.units must be positive");
  require(!c.lula.unit_grid.empty(), "lula.unit_grid must not be empty");
  for (auto u : c.lula.unit_grid) require(u >= 1, "lula.unit_grid entries must be positive");
  require(!c.lula.init_std || *c.lula.init_std >= 0.0, "lula.init_std must be non-negative");
  require(c.lula.train.learning_rate > 0.0, "lula.learning_rate must be positive");
  require(c.lula.train.epochs >= 1, "lula.epochs must be at least 1");
  require(c.lula.train.variance.samples >= 1, "lula.samples must be at least 1");
  require(c.lula.outliers.low < c.lula.outliers.high, "lula.outlier_low must be below lula.outlier_high");
  require(c.eval.noise_low < c.eval.noise_high, "eval.noise_low must be below eval.noise_high");
  require(c.eval.repeats >= 1, "eval.repeats must be at least 1");
  require(c.demo.moons_size >= 10 && c.demo.regression_size >= 10, "demo sizes must be at least 10");
  require(!c.demo.moons_hidden.empty(), "demo.moons_hidden must name at least one layer");
  require(c.demo.moons_learning_rate > 0.0 && c.demo.regression_learning_rate > 0.0,
          "demo learning rates must be positive");
  require(c.demo.moons_weight_decay >= 0.0 && c.demo.regression_weight_decay >= 0.0,
          "demo weight decays must be non-negative");
  require(c.demo.moons_epochs >= 1 && c.demo.regression_epochs >= 1 &&
              c.demo.moons_lula_epochs >= 1 && c.demo.regression_lula_epochs >= 1,
          "demo epoch counts must be at least 1");
  require(c.demo.moons_prior_precision > 0.0 && c.demo.regression_prior_precision > 0.0,
          "demo prior precisions must be positive");
  require(c.demo.regression_hidden >= 1, "demo.regression_hidden must be positive");
  require(c.demo.moons_units >= 1 && c.demo.regression_units >= 1, "demo unit counts must be positive");
  require(c.demo.ring_min >= 0.0 && c.demo.ring_min < c.demo.ring_max, "demo ring radii must satisfy 0 <= min < max");
  require(c.demo.ring_points >= 1, "demo.ring_points must be positive");
  require(c.demo.grid_resolution >= 2, "demo.grid_resolution must be at least 2");
  require(c.demo.grid_half_width > 0.0, "demo.grid_half_width must be positive");
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig config;
  for (const auto& k : keys()) apply(k, config, std::string(k.fallback), "");
  return config;
}

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
  ExperimentConfig config = default_config();
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = std::string(origin) + " line " + std::to_string(line_no) + ": ";
    const auto comment = line.find_first_of("#;");
    const std::string body = trim(comment == std::string::npos ? line : line.substr(0, comment));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where + "malformed section header '" + body + "'");
      section = trim(body.substr(1, body.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    const std::string name = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + name + "' outside of any section");
    const Key* key = find_key(section, name);
    if (!key) throw ConfigError(where + "unknown key '" + name + "' in section [" + section + "]");
    apply(*key, config, value, where);
  }
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) {
  const Rng base(seed);
  auto next = [&](std::uint64_t stream) { return base.derive(stream).next_u64(); };
  config.data.seed = next(1);
  config.data.split.seed = next(2);
  config.train.seed = next(3);
  config.laplace.predict.seed = next(4);
  config.lula.train.seed = next(5);
  config.lula.train.variance.seed = next(6);
  config.eval.seed = next(7);
  config.demo.seed = next(8);
}

std::string reference_config() {
  std::string out =
      "# lula-lab configuration reference: every key with its default value.\n"
      "# Lists are comma separated. Unknown sections or keys are rejected.\n";
  std::string_view section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      section = k.section;
      out += "\n[" + std::string(section) + "]\n";
    }
    if (!k.doc.empty()) out += "# " + std::string(k.doc) + "\n";
    out += std::string(k.name) + " = " + std::string(k.fallback) + "\n";
  }
  return out;
}

}  // namespace lula::cli
