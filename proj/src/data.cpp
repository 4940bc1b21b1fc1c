#include "lula/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lula/error.hpp"

namespace lula {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

Dataset with_features(const Dataset& base, Matrix features, Role role) {
  Dataset out;
  out.features = std::move(features);
  out.task = base.task;
  out.num_classes = base.num_classes;
  out.role = role;
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::train: return "train";
    case Role::val: return "val";
    case Role::test: return "test";
    case Role::in: return "in";
    case Role::out: return "out";
  }
  return "train";
}

std::string_view to_string(OodKind kind) {
  switch (kind) {
    case OodKind::permute: return "permute";
    case OodKind::blur: return "blur";
    case OodKind::contrast: return "contrast";
  }
  return "permute";
}

OodKind ood_kind_from_string(std::string_view name) {
  if (name == "permute") return OodKind::permute;
  if (name == "blur") return OodKind::blur;
  if (name == "contrast") return OodKind::contrast;
  throw InvalidArgument("unknown outlier kind '" + std::string(name) + "'");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out = *this;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  if (targets.rows() > 0) out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  out.labels.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    if (r >= features.rows()) throw InvalidArgument("subset: row index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    if (targets.rows() > 0) out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(r);
    if (!labels.empty()) out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

void Dataset::validate() const {
  if (targets.rows() > 0 && targets.rows() != features.rows()) {
    throw DimensionMismatch("dataset has " + std::to_string(features.rows()) + " rows but " +
                            std::to_string(targets.rows()) + " targets");
  }
  if (!labels.empty()) {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
      throw DimensionMismatch("dataset has " + std::to_string(features.rows()) + " rows but " +
                              std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
      if (y < 0 || y >= num_classes) {
        throw InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
      }
    }
  }
}

Dataset gen_two_moons(std::size_t m, double noise_std, std::uint64_t seed) {
  if (m < 2) throw InvalidArgument("gen_two_moons: need at least 2 points");
  Rng rng(seed);
  const std::size_t n_outer = (m + 1) / 2;
  const std::size_t n_inner = m / 2;
  Matrix x(static_cast<Eigen::Index>(m), 2);
  std::vector<int> y(m);
  auto angle = [](std::size_t i, std::size_t n) {
    return n > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
  };
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < n_outer; ++i, ++row) {
    const double t = angle(i, n_outer);
    x(row, 0) = std::cos(t);
    x(row, 1) = std::sin(t);
    y[static_cast<std::size_t>(row)] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i, ++row) {
    const double t = angle(i, n_inner);
    x(row, 0) = 1.0 - std::cos(t);
    x(row, 1) = 0.5 - std::sin(t);
    y[static_cast<std::size_t>(row)] = 1;
  }
  if (noise_std > 0.0) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x(i, 0) += noise_std * rng.normal();
      x(i, 1) += noise_std * rng.normal();
    }
  }
  Dataset all;
  all.features = std::move(x);
  all.labels = std::move(y);
  all.num_classes = 2;
  all.task = Task::classification;
  return all.subset(random_permutation(m, rng));
}

Dataset gen_toy_regression(std::size_t m, double x_low, double x_high, double noise_std,
                           std::uint64_t seed) {
  if (m < 2) throw InvalidArgument("gen_toy_regression: need at least 2 points");
  if (!(x_low < x_high)) throw InvalidArgument("gen_toy_regression: empty x range");
  Rng rng(seed);
  const double width = x_high - x_low;
  Dataset out;
  out.task = Task::regression;
  out.features.resize(static_cast<Eigen::Index>(m), 1);
  out.targets.resize(static_cast<Eigen::Index>(m), 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double begin = (i % 2 == 0) ? 0.1 : 0.6;
    const double x = x_low + width * (begin + 0.3 * rng.uniform());
    const double noise = noise_std > 0.0 ? noise_std * rng.normal() : 0.0;
    out.features(static_cast<Eigen::Index>(i), 0) = x;
    out.targets(static_cast<Eigen::Index>(i), 0) = std::sin(2.0 * x) + noise;
  }
  return out;
}

Dataset synthesize_ood(const Dataset& in_data, OodKind kind, Rng& rng, const OodParams& params) {
  if (in_data.size() == 0) throw InvalidArgument("synthesize_ood: empty input dataset");
  const Eigen::Index n = in_data.dim();
  Matrix x = in_data.features;
  switch (kind) {
    case OodKind::permute:
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto perm = random_permutation(static_cast<std::size_t>(n), rng);
        for (Eigen::Index j = 0; j < n; ++j) {
          x(i, j) = in_data.features(i, static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]));
        }
      }
      break;
    case OodKind::blur: {
      if (n < 3) throw InvalidArgument("synthesize_ood: blur needs at least 3 features");
      const int half = params.blur_width / 2;
      for (int pass = 0; pass < params.blur_passes; ++pass) {
        const Matrix src = x;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          for (Eigen::Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int o = -half; o <= half; ++o) {
              const Eigen::Index c = std::clamp<Eigen::Index>(j + o, 0, n - 1);
              acc += src(i, c);
            }
            x(i, j) = acc / static_cast<double>(2 * half + 1);
          }
        }
      }
      break;
    }
    case OodKind::contrast:
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double c = rng.uniform(params.contrast_low, params.contrast_high);
        const double mean = x.row(i).mean();
        for (Eigen::Index j = 0; j < n; ++j) x(i, j) = mean + c * (x(i, j) - mean);
      }
      break;
  }
  return with_features(in_data, std::move(x), Role::out);
}

Dataset gen_uniform_noise(std::size_t m, std::size_t n, double low, double high,
                          std::uint64_t seed, double scale) {
  if (!(low < high)) throw InvalidArgument("gen_uniform_noise: need low < high");
  Rng rng(seed);
  Dataset out;
  out.role = Role::out;
  out.features.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
      out.features(i, j) = scale * rng.uniform(low, high);
    }
  }
  return out;
}

Dataset apply_standardization(const Dataset& data, const Standardization& stats) {
  if (stats.mean.size() != data.dim()) {
    throw DimensionMismatch("standardization has " + std::to_string(stats.mean.size()) +
                            " features, dataset has " + std::to_string(data.dim()));
  }
  Dataset out = data;
  for (Eigen::Index j = 0; j < data.dim(); ++j) {
    out.features.col(j) = (data.features.col(j).array() - stats.mean(j)) / stats.std(j);
  }
  out.standardization = stats;
  return out;
}

Dataset unstandardize(const Dataset& data) {
  if (!data.standardization) throw InvalidArgument("unstandardize: dataset is not standardized");
  const Standardization& stats = *data.standardization;
  Dataset out = data;
  for (Eigen::Index j = 0; j < data.dim(); ++j) {
    out.features.col(j) = data.features.col(j).array() * stats.std(j) + stats.mean(j);
  }
  out.standardization.reset();
  return out;
}

StandardizedSplit standardize(const Dataset& train, const std::vector<Dataset>& others) {
  if (train.size() == 0) throw InvalidArgument("standardize: empty training set");
  const auto m = static_cast<double>(train.size());
  Standardization stats;
  stats.mean = train.features.colwise().mean().transpose();
  stats.std.resize(train.dim());
  for (Eigen::Index j = 0; j < train.dim(); ++j) {
    const double var = (train.features.col(j).array() - stats.mean(j)).square().sum() / m;
    const double sd = std::sqrt(var);
    stats.std(j) = sd > 1e-12 ? sd : 1.0;
  }
  StandardizedSplit out;
  out.train = apply_standardization(train, stats);
  for (const auto& d : others) out.others.push_back(apply_standardization(d, stats));
  out.stats = std::move(stats);
  return out;
}

Splits split(const Dataset& data, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must be non-negative and sum to 1");
  }
  const auto m = static_cast<std::size_t>(data.size());
  Rng rng(spec.seed);
  const auto perm = random_permutation(m, rng);
  const auto n_train = std::min<std::size_t>(m, static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(m))));
  const auto n_val = std::min<std::size_t>(m - n_train, static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(m))));
  auto take = [&](std::size_t begin, std::size_t count, Role role) {
    Dataset d = data.subset({perm.begin() + static_cast<std::ptrdiff_t>(begin),
                             perm.begin() + static_cast<std::ptrdiff_t>(begin + count)});
    d.role = role;
    return d;
  };
  return {take(0, n_train, Role::train), take(n_train, n_val, Role::val),
          take(n_train + n_val, m - n_train - n_val, Role::test)};
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CSV file '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  long target = -1;
  std::size_t columns = 0;
  if (options.has_header) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    ++line_no;
    const auto names = split_csv_line(line);
    columns = names.size();
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (trim(names[j]) == options.target_column) target = static_cast<long>(j);
    }
    if (target < 0) {
      throw FormatError(path.string() + ": target column '" + options.target_column +
                        "' not found in header");
    }
  } else {
    const std::string& t = options.target_column;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), target);
    if (ec != std::errc() || ptr != t.data() + t.size() || target < 0) {
      throw FormatError(path.string() + ": target column '" + t +
                        "' must be a zero-based index when the file has no header");
    }
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw FormatError(path.string() + ": row " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " columns, expected " +
                        std::to_string(columns));
    }
    std::vector<double> values(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string cell = trim(cells[j]);
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), values[j]);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw FormatError(path.string() + ": cannot parse '" + cell + "' at row " +
                          std::to_string(line_no) + ", column " + std::to_string(j + 1));
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no data rows");
  if (static_cast<std::size_t>(target) >= columns) {
    throw FormatError(path.string() + ": target column index " + std::to_string(target) +
                      " out of range");
  }

  Dataset out;
  out.task = options.task;
  out.features.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(columns - 1));
  if (options.task == Task::regression) out.targets.resize(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < columns; ++j) {
      if (static_cast<long>(j) == target) continue;
      out.features(static_cast<Eigen::Index>(i), c++) = rows[i][j];
    }
    const double y = rows[i][static_cast<std::size_t>(target)];
    if (options.task == Task::regression) {
      out.targets(static_cast<Eigen::Index>(i), 0) = y;
    } else {
      if (y < 0 || y != std::floor(y)) {
        throw FormatError(path.string() + ": label '" + std::to_string(y) + "' at data row " +
                          std::to_string(i + 1) + " is not a non-negative integer");
      }
      out.labels.push_back(static_cast<int>(y));
      out.num_classes = std::max(out.num_classes, static_cast<int>(y) + 1);
    }
  }
  return out;
}

}  // namespace lula
