#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/logging.hpp"
#include "lmprior/math.hpp"
#include "lmprior/prompts.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

/// One Gaussian belief about one parameter, on the z-scored feature scale.
struct GaussianComponent {
  double mean = 0.0;
  double std = 1.0;

  void validate() const {
    if (!std::isfinite(mean)) throw ArgumentError("GaussianComponent: mean must be finite");
    if (!(std > 0.0) || !std::isfinite(std)) {
      throw ArgumentError("GaussianComponent: std must be positive and finite");
    }
  }
};

/// K descriptions' worth of per-feature components, as elicited.
struct ElicitedPriorTable {
  std::string dataset_id;
  std::vector<std::string> feature_names;
  std::vector<std::pair<int, int>> description_origins;       // K
  std::vector<std::vector<GaussianComponent>> components;     // K x d

  int K() const { return static_cast<int>(components.size()); }
  int d() const { return static_cast<int>(feature_names.size()); }

  void validate() const {
    if (K() < 1) throw ArgumentError("ElicitedPriorTable: need at least one description");
    if (d() < 1) throw ArgumentError("ElicitedPriorTable: need at least one feature");
    if (description_origins.size() != components.size()) {
      throw ArgumentError("ElicitedPriorTable: origin count mismatch");
    }
    for (const auto& row : components) {
      if (static_cast<int>(row.size()) != d()) {
        throw ArgumentError("ElicitedPriorTable: component row width mismatch");
      }
      for (const auto& c : row) c.validate();
    }
  }
};

/// Equal-weight Gaussian mixture per coefficient dimension plus a fixed
/// standard-normal bias dimension.  The symmetric Dirichlet(1) weight prior
/// is marginalized: its expectation makes every component weight 1/K.
struct MixturePrior {
  std::vector<std::vector<GaussianComponent>> components;  // K x d, feature dims only

  int K() const { return static_cast<int>(components.size()); }
  int d() const { return components.empty() ? 0 : static_cast<int>(components[0].size()); }
  /// Parameter dimension including the bias (bias is last).
  int dim() const { return d() + 1; }

  void validate() const {
    if (K() < 1) throw ArgumentError("MixturePrior: need at least one component");
    if (d() < 1) throw ArgumentError("MixturePrior: need at least one feature dimension");
    for (const auto& row : components) {
      if (static_cast<int>(row.size()) != d()) {
        throw ArgumentError("MixturePrior: ragged component grid");
      }
      for (const auto& c : row) c.validate();
    }
  }
};

inline MixturePrior build_mixture(const ElicitedPriorTable& table) {
  table.validate();
  MixturePrior prior;
  prior.components = table.components;
  prior.validate();
  return prior;
}

/// Single-Gaussian-per-dimension prior (K=1) from explicit per-feature
/// components.
inline MixturePrior make_single_gaussian_prior(std::vector<GaussianComponent> per_feature) {
  MixturePrior prior;
  prior.components.push_back(std::move(per_feature));
  prior.validate();
  return prior;
}

/// Uninformative baseline: every coefficient ~ N(0,1).
inline MixturePrior make_uninformative_normal(int d) {
  if (d < 1) throw ArgumentError("make_uninformative_normal: d must be >= 1");
  return make_single_gaussian_prior(std::vector<GaussianComponent>(d, {0.0, 1.0}));
}

/// Uninformative mixture baseline: K components per dimension with means
/// drawn from N(0,1) and std 1.
inline MixturePrior make_uninformative_mixture(int d, int K, std::uint64_t seed) {
  if (d < 1 || K < 1) throw ArgumentError("make_uninformative_mixture: d and K must be >= 1");
  auto engine = make_engine(derive_seed(seed, "uninformative-mixture"));
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  MixturePrior prior;
  prior.components.resize(K);
  for (int k = 0; k < K; ++k) {
    prior.components[k].reserve(d);
    for (int j = 0; j < d; ++j) prior.components[k].push_back({standard_normal(engine), 1.0});
  }
  return prior;
}

/// Log density of one dimension's equal-weight mixture.  `j == d()` selects
/// the bias dimension, whose K identical N(0,1) components collapse to a
/// standard normal for any weights.
inline double dimension_log_density(const MixturePrior& prior, int j, double x) {
  if (j == prior.d()) return normal_log_pdf(x, 0.0, 1.0);
  if (j < 0 || j > prior.d()) throw ArgumentError("dimension_log_density: index out of range");
  const int K = prior.K();
  Eigen::VectorXd terms(K);
  for (int k = 0; k < K; ++k) {
    const auto& c = prior.components[k][j];
    terms[k] = normal_log_pdf(x, c.mean, c.std);
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(K));
}

/// Same, with explicit mixture weights (must sum to 1).  Used to check the
/// Dirichlet marginalization numerically.
inline double dimension_log_density(const MixturePrior& prior, int j, double x,
                                    const Eigen::VectorXd& weights) {
  if (j == prior.d()) return normal_log_pdf(x, 0.0, 1.0);
  if (j < 0 || j > prior.d()) throw ArgumentError("dimension_log_density: index out of range");
  if (weights.size() != prior.K()) {
    throw ArgumentError("dimension_log_density: weight count mismatch");
  }
  Eigen::VectorXd terms(prior.K());
  for (int k = 0; k < prior.K(); ++k) {
    const auto& c = prior.components[k][j];
    terms[k] = std::log(weights[k]) + normal_log_pdf(x, c.mean, c.std);
  }
  return log_sum_exp(terms);
}

/// Joint log prior density at theta = (w_0..w_{d-1}, bias); dimensions are
/// independent, so the joint is the sum of per-dimension mixture terms.
inline double mixture_log_density(const MixturePrior& prior, const Eigen::VectorXd& theta) {
  if (theta.size() != prior.dim()) {
    throw ArgumentError("mixture_log_density: theta must have length d+1 (bias last)");
  }
  double total = 0.0;
  for (int j = 0; j < prior.dim(); ++j) total += dimension_log_density(prior, j, theta[j]);
  return total;
}

/// Value and analytic gradient of the joint log density.  The gradient in
/// dimension j is the responsibility-weighted sum of component score
/// functions -(x - mu)/sigma^2.
inline double mixture_log_density_grad(const MixturePrior& prior, const Eigen::VectorXd& theta,
                                       Eigen::VectorXd& grad) {
  if (theta.size() != prior.dim()) {
    throw ArgumentError("mixture_log_density_grad: theta must have length d+1");
  }
  grad.resize(prior.dim());
  const int K = prior.K();
  double total = 0.0;
  Eigen::VectorXd terms(K);
  for (int j = 0; j < prior.d(); ++j) {
    for (int k = 0; k < K; ++k) {
      const auto& c = prior.components[k][j];
      terms[k] = normal_log_pdf(theta[j], c.mean, c.std);
    }
    const double lse = log_sum_exp(terms);
    total += lse - std::log(static_cast<double>(K));
    double slope = 0.0;
    for (int k = 0; k < K; ++k) {
      const auto& c = prior.components[k][j];
      const double resp = std::exp(terms[k] - lse);
      slope += resp * (-(theta[j] - c.mean) / (c.std * c.std));
    }
    grad[j] = slope;
  }
  const double bias = theta[prior.d()];
  total += normal_log_pdf(bias, 0.0, 1.0);
  grad[prior.d()] = -bias;
  return total;
}

/// n draws from the prior; per sample and dimension the component index is
/// uniform over K, then the Gaussian is sampled.  Deterministic per seed.
inline Eigen::MatrixXd sample_prior(const MixturePrior& prior, int n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("sample_prior: n must be >= 1");
  auto engine = make_engine(derive_seed(seed, "prior-sample"));
  std::uniform_int_distribution<int> pick(0, prior.K() - 1);
  std::normal_distribution<double> standard_normal(0.0, 1.0);
  Eigen::MatrixXd out(n, prior.dim());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < prior.d(); ++j) {
      const auto& c = prior.components[pick(engine)][j];
      out(i, j) = c.mean + c.std * standard_normal(engine);
    }
    out(i, prior.d()) = standard_normal(engine);
  }
  return out;
}

struct ElicitOptions {
  std::string model_id;
  double temperature = 0.1;
  int retry_limit = 3;          // re-asks for invalid component replies
  double std_cap = 100.0;       // larger elicited stds are clamped with a warning
  int n_threads = 1;            // concurrent descriptions
};

namespace detail {

inline std::optional<double> number_field(const nlohmann::json& obj, const std::string& key) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) return std::nullopt;
  return it->get<double>();
}

/// Validates a parsed elicitation reply; returns components in feature order
/// or an explanation of what was wrong.
inline std::variant<std::vector<GaussianComponent>, std::string> components_from_json(
    const nlohmann::json& reply, const std::vector<std::string>& feature_names) {
  if (!reply.is_object()) return std::string("reply is not a JSON object");
  for (const auto& [key, value] : reply.items()) {
    if (std::find(feature_names.begin(), feature_names.end(), key) == feature_names.end()) {
      return "unexpected key '" + key + "'";
    }
    (void)value;
  }
  std::vector<GaussianComponent> components;
  components.reserve(feature_names.size());
  for (const auto& name : feature_names) {
    const auto it = reply.find(name);
    if (it == reply.end()) return "missing feature '" + name + "'";
    if (!it->is_object()) return "entry for '" + name + "' is not an object";
    const auto mean = number_field(*it, "mean");
    const auto std_dev = number_field(*it, "std");
    if (!mean || !std_dev) return "entry for '" + name + "' lacks numeric mean/std";
    if (!std::isfinite(*mean)) return "mean for '" + name + "' is not finite";
    if (!(*std_dev > 0.0) || !std::isfinite(*std_dev)) {
      return "std for '" + name + "' is not positive";
    }
    components.push_back({*mean, *std_dev});
  }
  return components;
}

}  // namespace detail

/// One description -> one per-feature component row.  Invalid replies
/// (wrong keys, non-positive std) are re-asked with a corrective reminder up
/// to retry_limit times before the description is rejected.
inline std::vector<GaussianComponent> elicit_component(const TaskDescription& description,
                                                       const std::vector<std::string>& feature_names,
                                                       Gateway& gateway,
                                                       const ElicitOptions& options) {
  if (feature_names.empty()) throw ArgumentError("elicit_component: no feature names");
  ChatRequest request;
  request.model_id = options.model_id;
  request.temperature = options.temperature;
  request.messages = {{"system", description.system}, {"user", description.user}};

  std::string last_reason;
  for (int attempt = 0; attempt <= options.retry_limit; ++attempt) {
    if (attempt > 0) {
      request.messages.push_back(
          {"user",
           "Your previous answer was invalid (" + last_reason +
               "). Respond with a JSON object keyed by exactly these feature names: " +
               render_feature_list(feature_names) +
               ", each mapping to {\"mean\": number, \"std\": positive number}."});
    }
    nlohmann::json reply;
    try {
      reply = gateway.complete_json(request, options.retry_limit);
    } catch (const ElicitationParseError& e) {
      throw ComponentRejectedError(
          "description (" + std::to_string(description.origin.first) + "," +
              std::to_string(description.origin.second) + ") never produced JSON: " + e.what(),
          "unparseable");
    }
    auto outcome = detail::components_from_json(reply, feature_names);
    if (auto* components = std::get_if<std::vector<GaussianComponent>>(&outcome)) {
      for (std::size_t j = 0; j < components->size(); ++j) {
        auto& c = (*components)[j];
        if (c.std > options.std_cap) {
          log_warning("elicited std " + std::to_string(c.std) + " for '" + feature_names[j] +
                      "' clamped to " + std::to_string(options.std_cap));
          c.std = options.std_cap;
        }
      }
      return *components;
    }
    last_reason = std::get<std::string>(outcome);
  }
  throw ComponentRejectedError("component rejected after " +
                                   std::to_string(options.retry_limit) +
                                   " re-asks: " + last_reason,
                               last_reason);
}

/// Elicit a component row per description, dropping descriptions that keep
/// failing validation (with a warning).  Order follows the input order.
inline ElicitedPriorTable elicit_table(const std::vector<TaskDescription>& descriptions,
                                       const std::vector<std::string>& feature_names,
                                       const std::string& dataset_id, Gateway& gateway,
                                       const ElicitOptions& options) {
  if (descriptions.empty()) throw ArgumentError("elicit_table: no descriptions");
  const int n = static_cast<int>(descriptions.size());
  std::vector<std::optional<std::vector<GaussianComponent>>> rows(n);

  const int n_threads = std::max(1, std::min(options.n_threads, n));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        rows[i] = elicit_component(descriptions[i], feature_names, gateway, options);
      } catch (const ComponentRejectedError& e) {
        log_warning("dropping description (" + std::to_string(descriptions[i].origin.first) +
                    "," + std::to_string(descriptions[i].origin.second) + "): " + e.what());
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ElicitedPriorTable table;
  table.dataset_id = dataset_id;
  table.feature_names = feature_names;
  for (int i = 0; i < n; ++i) {
    if (!rows[i]) continue;
    table.description_origins.push_back(descriptions[i].origin);
    table.components.push_back(std::move(*rows[i]));
  }
  if (table.components.empty()) {
    throw ComponentRejectedError("every description was rejected during elicitation",
                                 "all rejected");
  }
  table.validate();
  return table;
}

inline nlohmann::json table_to_json(const ElicitedPriorTable& table) {
  nlohmann::json descriptions = nlohmann::json::array();
  for (const auto& [s, u] : table.description_origins) {
    descriptions.push_back({{"system_variant", s}, {"user_variant", u}});
  }
  nlohmann::json components = nlohmann::json::array();
  for (const auto& row : table.components) {
    nlohmann::json json_row = nlohmann::json::array();
    for (const auto& c : row) json_row.push_back({{"mean", c.mean}, {"std", c.std}});
    components.push_back(std::move(json_row));
  }
  return {{"dataset_id", table.dataset_id},
          {"feature_names", table.feature_names},
          {"descriptions", std::move(descriptions)},
          {"components", std::move(components)}};
}

inline ElicitedPriorTable table_from_json(const nlohmann::json& j) {
  ElicitedPriorTable table;
  table.dataset_id = j.at("dataset_id").get<std::string>();
  table.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& rec : j.at("descriptions")) {
    table.description_origins.emplace_back(rec.at("system_variant").get<int>(),
                                           rec.at("user_variant").get<int>());
  }
  for (const auto& row : j.at("components")) {
    std::vector<GaussianComponent> components;
    for (const auto& cell : row) {
      components.push_back(
          {cell.at("mean").get<double>(), cell.at("std").get<double>()});
    }
    table.components.push_back(std::move(components));
  }
  table.validate();
  return table;
}

inline void save_table(const ElicitedPriorTable& table, const std::filesystem::path& path) {
  write_text_file(path, table_to_json(table).dump(2) + "\n");
}

inline ElicitedPriorTable load_table(const std::filesystem::path& path) {
  return table_from_json(nlohmann::json::parse(read_text_file(path)));
}

}  // namespace lmprior
