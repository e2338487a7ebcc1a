#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "lmprior/csvio.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

enum class TaskKind { classification, regression };

inline std::string to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "regression") return TaskKind::regression;
  throw ParseError("unknown task kind '" + s + "'");
}

/// A tabular predictive task.  Immutable after construction; operations below
/// return fresh datasets rather than mutating.
struct Dataset {
  Eigen::MatrixXd features;                // n x d
  Eigen::VectorXd targets;                 // n
  std::vector<std::string> feature_names;  // d, unique
  std::string target_name;
  TaskKind task_kind = TaskKind::regression;
  std::vector<std::string> group_ids;      // empty or length n
  std::vector<bool> categorical_mask;      // length d

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
  bool has_groups() const { return !group_ids.empty(); }

  void validate() const {
    if (n() < 1) throw ArgumentError("Dataset: need at least one row");
    if (d() < 1) throw ArgumentError("Dataset: need at least one feature");
    if (targets.size() != n()) throw ArgumentError("Dataset: target length mismatch");
    if (static_cast<Eigen::Index>(feature_names.size()) != d()) {
      throw ArgumentError("Dataset: feature name count mismatch");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : feature_names) {
      if (!seen.insert(name).second) {
        throw ArgumentError("Dataset: duplicate feature name '" + name + "'");
      }
    }
    if (static_cast<Eigen::Index>(categorical_mask.size()) != d()) {
      throw ArgumentError("Dataset: categorical mask length mismatch");
    }
    if (!group_ids.empty() && static_cast<Eigen::Index>(group_ids.size()) != n()) {
      throw ArgumentError("Dataset: group id length mismatch");
    }
    if (task_kind == TaskKind::classification) {
      for (Eigen::Index i = 0; i < n(); ++i) {
        if (targets[i] != 0.0 && targets[i] != 1.0) {
          throw ArgumentError("Dataset: classification target outside {0,1} at row " +
                              std::to_string(i));
        }
      }
    }
  }

  /// Row subset, preserving column metadata.
  Dataset subset(const std::vector<int>& indices) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), d());
    out.targets.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(indices[i]);
      out.targets[static_cast<Eigen::Index>(i)] = targets[indices[i]];
    }
    out.feature_names = feature_names;
    out.target_name = target_name;
    out.task_kind = task_kind;
    out.categorical_mask = categorical_mask;
    if (!group_ids.empty()) {
      out.group_ids.reserve(indices.size());
      for (int idx : indices) out.group_ids.push_back(group_ids[idx]);
    }
    return out;
  }
};

/// One random train/test split.
struct Fold {
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  std::uint64_t seed = 0;
};

/// Synthetic regression task with three standard-normal features and
/// target 2*x1 - x2 + x3 plus Gaussian noise.  `noise_sd` is the noise
/// standard deviation.
inline Dataset generate_synthetic(int n, double noise_sd, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("generate_synthetic: n must be >= 1");
  if (!(noise_sd >= 0.0)) throw ArgumentError("generate_synthetic: noise_sd must be >= 0");
  Dataset ds;
  ds.features.resize(n, 3);
  ds.targets.resize(n);
  auto engine = make_engine(derive_seed(seed, "synthetic"));
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double x1 = standard_normal(engine);
    const double x2 = standard_normal(engine);
    const double x3 = standard_normal(engine);
    ds.features(i, 0) = x1;
    ds.features(i, 1) = x2;
    ds.features(i, 2) = x3;
    const double eps = noise_sd > 0.0 ? noise_sd * standard_normal(engine) : 0.0;
    ds.targets[i] = 2.0 * x1 - x2 + x3 + eps;
  }
  ds.feature_names = {"feature 0", "feature 1", "feature 2"};
  ds.target_name = "target";
  ds.task_kind = TaskKind::regression;
  ds.categorical_mask.assign(3, false);
  ds.validate();
  return ds;
}

enum class SplitStrategy { plain, stratified, grouped };

inline SplitStrategy split_strategy_from_string(const std::string& s) {
  if (s == "plain") return SplitStrategy::plain;
  if (s == "stratified") return SplitStrategy::stratified;
  if (s == "grouped") return SplitStrategy::grouped;
  throw ConfigError("unknown split strategy '" + s + "'");
}

namespace detail {

inline Fold make_one_fold(const Dataset& ds, double test_fraction, SplitStrategy strategy,
                          std::uint64_t fold_seed) {
  const int n = static_cast<int>(ds.n());
  Fold fold;
  fold.seed = fold_seed;
  auto engine = make_engine(fold_seed);

  if (strategy == SplitStrategy::plain) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), engine);
    // Test gets floor(n * fraction); the remainder stays in training.
    const int n_test = static_cast<int>(std::floor(test_fraction * n));
    fold.test_indices.assign(order.begin(), order.begin() + n_test);
    fold.train_indices.assign(order.begin() + n_test, order.end());
  } else if (strategy == SplitStrategy::stratified) {
    if (ds.task_kind != TaskKind::classification) {
      throw ConfigError("stratified splits require a classification task");
    }
    // Per class: shuffle and send floor(count * fraction) to the test side,
    // so odd counts leave the extra sample in training.
    for (double cls : {0.0, 1.0}) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i) {
        if (ds.targets[i] == cls) members.push_back(i);
      }
      std::shuffle(members.begin(), members.end(), engine);
      const int n_test = static_cast<int>(std::floor(test_fraction * members.size()));
      fold.test_indices.insert(fold.test_indices.end(), members.begin(),
                               members.begin() + n_test);
      fold.train_indices.insert(fold.train_indices.end(), members.begin() + n_test,
                                members.end());
    }
  } else {  // grouped
    if (!ds.has_groups()) {
      throw ConfigError("grouped splits require group ids on the dataset");
    }
    std::vector<std::string> groups;
    std::unordered_map<std::string, std::vector<int>> members;
    for (int i = 0; i < n; ++i) {
      auto [it, inserted] = members.try_emplace(ds.group_ids[i]);
      if (inserted) groups.push_back(ds.group_ids[i]);
      it->second.push_back(i);
    }
    std::shuffle(groups.begin(), groups.end(), engine);
    // Fill the test side with whole groups until it reaches the target size.
    const int target = static_cast<int>(std::floor(test_fraction * n));
    int test_count = 0;
    for (const auto& g : groups) {
      auto& rows = members[g];
      if (test_count < target) {
        fold.test_indices.insert(fold.test_indices.end(), rows.begin(), rows.end());
        test_count += static_cast<int>(rows.size());
      } else {
        fold.train_indices.insert(fold.train_indices.end(), rows.begin(), rows.end());
      }
    }
  }
  std::sort(fold.train_indices.begin(), fold.train_indices.end());
  std::sort(fold.test_indices.begin(), fold.test_indices.end());
  return fold;
}

}  // namespace detail

/// Independent random splits; deterministic per (dataset, parameters, seed).
inline std::vector<Fold> make_folds(const Dataset& ds, int n_folds, double test_fraction,
                                    SplitStrategy strategy, std::uint64_t seed) {
  if (n_folds < 1) throw ArgumentError("make_folds: n_folds must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("make_folds: test_fraction must be in (0,1)");
  }
  std::vector<Fold> folds;
  folds.reserve(n_folds);
  for (int f = 0; f < n_folds; ++f) {
    folds.push_back(detail::make_one_fold(ds, test_fraction, strategy,
                                          derive_seed(seed, "fold", f)));
  }
  return folds;
}

/// Centre and scale non-categorical training columns to mean 0, sd 1
/// (population sd, divide by n) and transform the test set with the same
/// statistics.  Categorical columns pass through unchanged.
inline std::pair<Dataset, Dataset> normalize(const Dataset& train, const Dataset& test) {
  if (train.d() != test.d() || train.feature_names != test.feature_names) {
    throw ArgumentError("normalize: train and test feature sets differ");
  }
  Dataset train_out = train;
  Dataset test_out = test;
  for (Eigen::Index j = 0; j < train.d(); ++j) {
    if (train.categorical_mask[j]) continue;
    const double mean = train.features.col(j).mean();
    const double var =
        (train.features.col(j).array() - mean).square().sum() / static_cast<double>(train.n());
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      throw DegenerateColumnError(
          "normalize: zero-variance non-categorical column '" + train.feature_names[j] + "'",
          train.feature_names[j]);
    }
    train_out.features.col(j) = (train.features.col(j).array() - mean) / sd;
    test_out.features.col(j) = (test.features.col(j).array() - mean) / sd;
  }
  return {std::move(train_out), std::move(test_out)};
}

/// Keep `m` training indices drawn uniformly without replacement; the test
/// side is untouched.
inline Fold subsample_train(const Fold& fold, int m, std::uint64_t seed) {
  if (m < 0 || m > static_cast<int>(fold.train_indices.size())) {
    throw ArgumentError("subsample_train: m must be in [0, |train|]");
  }
  std::vector<int> pool = fold.train_indices;
  auto engine = make_engine(derive_seed(seed, "subsample"));
  std::shuffle(pool.begin(), pool.end(), engine);
  Fold out;
  out.seed = seed;
  out.train_indices.assign(pool.begin(), pool.begin() + m);
  std::sort(out.train_indices.begin(), out.train_indices.end());
  out.test_indices = fold.test_indices;
  return out;
}

/// Column layout of a CSV file: which column is the target, which are
/// categorical, and the optional group column.  All remaining columns are
/// numeric features in header order.
struct CsvSchema {
  std::string target_column;
  TaskKind task_kind = TaskKind::regression;
  std::vector<std::string> categorical_columns;
  std::optional<std::string> group_column;
};

inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  const std::string text = read_text_file(path);
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("empty CSV file: " + path.string());

  const auto header = split_csv_line(lines[0]);
  std::optional<std::size_t> target_col;
  std::optional<std::size_t> group_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.target_column) {
      target_col = c;
    } else if (schema.group_column && header[c] == *schema.group_column) {
      group_col = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (!target_col) {
    throw ParseError("target column '" + schema.target_column + "' not found in header");
  }
  if (schema.group_column && !group_col) {
    throw ParseError("group column '" + *schema.group_column + "' not found in header");
  }
  std::set<std::string> categorical(schema.categorical_columns.begin(),
                                    schema.categorical_columns.end());
  for (const auto& name : categorical) {
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw ParseError("categorical column '" + name + "' not found in header");
    }
  }

  Dataset ds;
  const std::size_t n_rows = lines.size() - 1;
  if (n_rows == 0) throw ParseError("CSV has a header but no data rows");
  ds.features.resize(static_cast<Eigen::Index>(n_rows),
                     static_cast<Eigen::Index>(feature_cols.size()));
  ds.targets.resize(static_cast<Eigen::Index>(n_rows));
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto cells = split_csv_line(lines[r + 1]);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(header.size()),
                       static_cast<long>(r + 1));
    }
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const auto& cell = cells[feature_cols[j]];
      if (cell.empty()) {
        throw ParseError("missing value at row " + std::to_string(r + 1) + ", column '" +
                             header[feature_cols[j]] + "'",
                         static_cast<long>(r + 1), static_cast<long>(feature_cols[j]));
      }
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          parse_double(cell, static_cast<long>(r + 1), static_cast<long>(feature_cols[j]));
    }
    ds.targets[static_cast<Eigen::Index>(r)] =
        parse_double(cells[*target_col], static_cast<long>(r + 1),
                     static_cast<long>(*target_col));
    if (group_col) ds.group_ids.push_back(cells[*group_col]);
  }
  for (std::size_t c : feature_cols) ds.feature_names.push_back(header[c]);
  ds.target_name = schema.target_column;
  ds.task_kind = schema.task_kind;
  ds.categorical_mask.reserve(feature_cols.size());
  for (std::size_t c : feature_cols) {
    ds.categorical_mask.push_back(categorical.count(header[c]) > 0);
  }
  ds.validate();
  return ds;
}

/// Render a dataset as CSV with round-trip-exact decimals; row order is the
/// dataset's row order.
inline std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream out;
  for (Eigen::Index j = 0; j < ds.d(); ++j) out << ds.feature_names[j] << ',';
  out << ds.target_name;
  if (ds.has_groups()) out << ",group";
  out << '\n';
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.d(); ++j) out << format_double(ds.features(i, j)) << ',';
    out << format_double(ds.targets[i]);
    if (ds.has_groups()) out << ',' << ds.group_ids[i];
    out << '\n';
  }
  return out.str();
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  write_text_file(path, dataset_to_csv(ds));
}

}  // namespace lmprior
