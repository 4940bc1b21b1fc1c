#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "helpers.hpp"
#include "lula/cli/commands.hpp"
#include "lula/cli/config.hpp"
#include "lula/error.hpp"

using namespace lula;
using namespace lula::cli;
namespace fs = std::filesystem;

namespace {

// Small moons problem that trains in well under a second.
constexpr const char* kSmall = R"(# unit test config
[data]
source = two_moons
size = 120
noise = 0.1
seed = 3

[model]
hidden = 8, 8

[train]
learning_rate = 0.01
epochs = 30
seed = 4

[laplace]
prior_precision = 1
samples = 20

[lula]
units = 4
epochs = 3
gradient = analytic
seed = 5

[eval]
repeats = 2
seed = 6

[demo]
moons_size = 80
moons_hidden = 8
moons_epochs = 20
moons_learning_rate = 0.01
moons_units = 4
moons_lula_epochs = 3
regression_size = 40
regression_hidden = 8
regression_epochs = 20
regression_units = 4
regression_lula_epochs = 3
ring_points = 50
grid_resolution = 10
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("lula_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& f) const { return path / f; }
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "test.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

int run(const std::string& cmd, const CommandOptions& opts, std::string* err_text = nullptr) {
  std::ostringstream log;
  std::ostringstream err;
  const int code = run_command(cmd, opts, log, err);
  if (err_text) *err_text = err.str();
  return code;
}

double summary_value(const fs::path& p, const std::string& key) {
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + " = ", 0) == 0) return std::stod(line.substr(key.size() + 3));
  }
  FAIL("missing summary key " << key);
  return 0.0;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("defaults") {
  const ExperimentConfig c = default_config();
  CHECK(c.data.source == "two_moons");
  CHECK(c.data.size == 500);
  CHECK(c.model.hidden == std::vector<Eigen::Index>{64, 64});
  CHECK(c.train.learning_rate == 0.001);
  CHECK(c.train.epochs == 200);
  CHECK(!c.laplace.prior_precision.has_value());
  CHECK(c.laplace.curvature == CurvatureKind::kfac_last_layer);
  CHECK(c.lula.units == 64);
  CHECK(c.lula.unit_grid == default_unit_grid());
  CHECK(c.lula.train.variance.evaluator == VarianceConfig::Evaluator::linearized);
  CHECK(c.lula.train.gradient == LulaTrainConfig::GradientMethod::finite_difference);
  CHECK(c.lula.train.curvature == CurvatureKind::diag_ggn);
  const ExperimentConfig parsed = parse_config("");
  CHECK(parsed.train.weight_decay == c.train.weight_decay);
  CHECK(parsed.lula.outliers.high == c.lula.outliers.high);
}

TEST_CASE("parsing values, comments and lists") {
  const ExperimentConfig c = parse_config(
      "; leading comment\n[model]\nhidden = 5,6 ,7\nactivation = tanh # trailing\n"
      "[laplace]\nprior_precision = 0.25\n[lula]\nunits = grid\nunit_grid = 8, 16\ninit_std = 0.2\n");
  CHECK(c.model.hidden == std::vector<Eigen::Index>{5, 6, 7});
  CHECK(c.model.activation == Activation::tanh);
  CHECK(c.laplace.prior_precision == 0.25);
  CHECK(!c.lula.units.has_value());
  CHECK(c.lula.unit_grid == std::vector<Eigen::Index>{8, 16});
  CHECK(c.lula.init_std == 0.2);
}

TEST_CASE("config errors name the offending key") {
  CHECK(config_error("[train]\nlearning_rat = 0.1\n").find("learning_rat") != std::string::npos);
  CHECK(config_error("[train]\nlearning_rat = 0.1\n").find("line 2") != std::string::npos);
  CHECK(config_error("[nonsense]\n").find("nonsense") != std::string::npos);
  CHECK(config_error("[train]\nepochs = many\n").find("train.epochs") != std::string::npos);
  CHECK(config_error("[train]\nlearning_rate = -1\n").find("learning_rate") != std::string::npos);
  CHECK(config_error("[train]\nepochs = 0\n").find("epochs") != std::string::npos);
  CHECK(config_error("[lula]\nvariance = exact\n").find("variance") != std::string::npos);
  CHECK(config_error("orphan = 1\n") != "");
  CHECK(config_error("[train]\nno equals sign\n") != "");
  CHECK_THROWS_AS(load_config("/nonexistent/lula.ini"), ConfigError);
}

TEST_CASE("reference config round-trips to the defaults") {
  const std::string ref = reference_config();
  const ExperimentConfig a = parse_config(ref, "reference");
  const ExperimentConfig d = default_config();
  CHECK(a.train.epochs == d.train.epochs);
  CHECK(a.model.hidden == d.model.hidden);
  // Uncommenting every key gives the same values.
  std::string uncommented;
  std::istringstream in(ref);
  std::string line;
  const std::regex key_line("# [a-z_]+ = .*");
  while (std::getline(in, line)) {
    if (std::regex_match(line, key_line)) line = line.substr(2);
    uncommented += line + '\n';
  }
  const ExperimentConfig b = parse_config(uncommented, "uncommented");
  CHECK(b.data.split.train == d.data.split.train);
  CHECK(b.lula.unit_grid == d.lula.unit_grid);
  CHECK(b.demo.moons_units == d.demo.moons_units);
  CHECK(b.eval.ood == d.eval.ood);
  CHECK(b.laplace.prior_precision == d.laplace.prior_precision);
}

TEST_CASE("documented reference file is current") {
  const fs::path doc = fs::path(LULA_SOURCE_DIR) / "docs" / "config-reference.ini";
  REQUIRE(fs::exists(doc));
  CHECK(slurp(doc) == reference_config());
}

TEST_CASE("seed override") {
  ExperimentConfig a = default_config();
  ExperimentConfig b = default_config();
  override_seed(a, 17);
  override_seed(b, 17);
  CHECK(a.train.seed == b.train.seed);
  CHECK(a.lula.train.seed == b.lula.train.seed);
  CHECK(a.train.seed != a.data.seed);
  ExperimentConfig c = default_config();
  override_seed(c, 18);
  CHECK(c.train.seed != a.train.seed);
}

TEST_CASE("exit codes") {
  TempDir dir("codes");
  write(dir / "bad.ini", "[train]\nbogus_key = 1\n");
  std::string err;
  CHECK(run("train", {dir / "bad.ini", {}, dir / "m.txt", {}}, &err) == kConfigError);
  CHECK(err.find("bogus_key") != std::string::npos);
  CHECK(run("train", {dir / "missing.ini", {}, {}, {}}) == kConfigError);
  write(dir / "ok.ini", kSmall);
  CHECK(run("lula", {dir / "ok.ini", {}, {}, {}}) == kConfigError);
  CHECK(run("frobnicate", {dir / "ok.ini", {}, {}, {}}) == kConfigError);
  CHECK(run("eval", {dir / "ok.ini", dir / "no_such_model.txt", dir / "e.csv", {}}) == kRuntimeFailure);
}

TEST_CASE("train, laplace, lula and eval end to end") {
  TempDir dir("pipeline");
  write(dir / "cfg.ini", kSmall);
  const fs::path cfg = dir / "cfg.ini";
  REQUIRE(run("train", {cfg, {}, dir / "model.txt", {}}) == kSuccess);
  REQUIRE(run("train", {cfg, {}, dir / "model2.txt", {}}) == kSuccess);
  CHECK(slurp(dir / "model.txt") == slurp(dir / "model2.txt"));
  CHECK(fs::exists(dir / "model.history.csv"));
  REQUIRE(run("train", {cfg, {}, dir / "model3.txt", 99}) == kSuccess);
  CHECK(slurp(dir / "model.txt") != slurp(dir / "model3.txt"));

  REQUIRE(run("laplace", {cfg, dir / "model.txt", dir / "la.txt", {}}) == kSuccess);
  CHECK(slurp(dir / "la.txt").find("prior_precision") != std::string::npos);

  std::ostringstream log;
  std::ostringstream err;
  REQUIRE(run_command("lula", {cfg, dir / "model.txt", dir / "lula.txt", {}}, log, err) == kSuccess);
  CHECK(log.str().find("output preservation check on 100 random inputs") != std::string::npos);
  CHECK(log.str().find("PASS") != std::string::npos);
  const Network map = load_network(dir / "model.txt");
  const Network tuned = load_network(dir / "lula.txt");
  const LulaAugmentation aug = load_augmentation(dir / "lula.aug.txt");
  CHECK(verify_structure(map, tuned, aug));
  Rng rng(1);
  const Matrix x = testing::random_matrix(rng, 100, 2, 3.0);
  CHECK(predict(map, x) == predict(tuned, x));

  REQUIRE(run("eval", {cfg, dir / "lula.txt", dir / "eval.csv", {}}) == kSuccess);
  const std::string csv = slurp(dir / "eval.csv");
  CHECK(csv.rfind("set,metric,mean,std\n", 0) == 0);
  CHECK(csv.find("uniform_noise,aur") != std::string::npos);
  CHECK(csv.find("permute,mmc") != std::string::npos);
}

TEST_CASE("a collapsed posterior reproduces the MAP confidence") {
  TempDir dir("collapsed");
  write(dir / "cfg.ini", std::string(kSmall) + "[laplace]\n");
  std::string text = kSmall;
  text.replace(text.find("prior_precision = 1"), 19, "prior_precision = 1e12");
  write(dir / "cfg.ini", text);
  REQUIRE(run("train", {dir / "cfg.ini", {}, dir / "model.txt", {}}) == kSuccess);
  REQUIRE(run("eval", {dir / "cfg.ini", dir / "model.txt", dir / "eval.csv", {}}) == kSuccess);
  const fs::path summary = dir / "eval.summary.txt";
  CHECK(std::abs(summary_value(summary, "test.mmc.mean") - summary_value(summary, "map.test.mmc")) < 1e-3);
}

TEST_CASE("regression pipeline") {
  TempDir dir("regression");
  write(dir / "cfg.ini",
        "[data]\nsource = toy_regression\nsize = 80\n[model]\nhidden = 10\n[train]\nepochs = 20\n"
        "learning_rate = 0.01\n[laplace]\nprior_precision = 1\nsamples = 10\n[lula]\nunits = 3\n"
        "epochs = 2\noutlier_low = -10\noutlier_high = 10\n[eval]\nrepeats = 1\nood = uniform_noise\n");
  REQUIRE(run("train", {dir / "cfg.ini", {}, dir / "model.txt", {}}) == kSuccess);
  REQUIRE(run("lula", {dir / "cfg.ini", dir / "model.txt", dir / "lula.txt", {}}) == kSuccess);
  REQUIRE(run("eval", {dir / "cfg.ini", dir / "lula.txt", dir / "eval.csv", {}}) == kSuccess);
  CHECK(slurp(dir / "eval.csv").find("test,rmse") != std::string::npos);
}

TEST_CASE("demo-toy output is byte-identical across runs") {
  TempDir dir("demo");
  write(dir / "cfg.ini", kSmall);
  REQUIRE(run("demo-toy", {dir / "cfg.ini", {}, dir / "a", {}}) == kSuccess);
  REQUIRE(run("demo-toy", {dir / "cfg.ini", {}, dir / "b", {}}) == kSuccess);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const fs::path other = dir / "b" / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
    ++files;
  }
  CHECK(files == 7);
  CHECK(slurp(dir / "a" / "summary.txt").find("moons.far_field_mmc.lula") != std::string::npos);
}

TEST_CASE("outlier sets") {
  const Dataset ref = gen_two_moons(30, 0.1, 1);
  const Dataset noise = make_outliers("uniform_noise", ref, 0, -6, 6, 2);
  CHECK(noise.size() == 30);
  CHECK(noise.features.cwiseAbs().maxCoeff() <= 6.0);
  CHECK(make_outliers("permute", ref, 10, 0, 1, 3).size() == 10);
  CHECK_THROWS(make_outliers("sideways", ref, 0, 0, 1, 3));
}

}  // TEST_SUITE
