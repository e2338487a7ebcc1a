#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/dataset.hpp"
#include "lmprior/elicitation.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/math.hpp"
#include "lmprior/nuts.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

/// Observed rows a model conditions on; may be empty (prior-only inference).
struct ModelData {
  Eigen::MatrixXd X;  // n x d
  Eigen::VectorXd y;  // n

  static ModelData from_dataset(const Dataset& ds) { return {ds.features, ds.targets}; }
  static ModelData empty(int d) { return {Eigen::MatrixXd(0, d), Eigen::VectorXd(0)}; }
  Eigen::Index n() const { return X.rows(); }
};

/// Bayesian linear or logistic regression under a mixture prior.  For
/// regression the noise scale gets a Half-Cauchy(beta) prior and is sampled
/// on the log scale unless `fixed_noise_sd` pins it.
struct LinearModelSpec {
  TaskKind task_kind = TaskKind::regression;
  MixturePrior prior;
  double noise_scale = 1.0;  // Half-Cauchy beta
  std::optional<double> fixed_noise_sd;

  int d() const { return prior.d(); }
  bool samples_noise() const {
    return task_kind == TaskKind::regression && !fixed_noise_sd.has_value();
  }
  /// Extended parameter dimension: weights, bias, then log noise if sampled.
  int ext_dim() const { return prior.dim() + (samples_noise() ? 1 : 0); }

  void validate() const {
    prior.validate();
    if (!(noise_scale > 0.0)) throw ArgumentError("LinearModelSpec: noise_scale must be > 0");
    if (fixed_noise_sd && !(*fixed_noise_sd > 0.0)) {
      throw ArgumentError("LinearModelSpec: fixed_noise_sd must be > 0");
    }
  }
};

namespace detail {

inline void check_data_shape(const LinearModelSpec& spec, const ModelData& data) {
  if (data.X.cols() != spec.d()) {
    throw ArgumentError("model data has " + std::to_string(data.X.cols()) +
                        " feature columns, spec expects " + std::to_string(spec.d()));
  }
  if (data.y.size() != data.n()) throw ArgumentError("model data target length mismatch");
}

}  // namespace detail

/// Unnormalized log posterior and its analytic gradient at the extended
/// parameter theta_ext = (w, bias [, log sigma]).  Throws NumericError with
/// the offending coordinate when the result overflows.
inline double log_posterior(const LinearModelSpec& spec, const ModelData& data,
                            const Eigen::VectorXd& theta_ext, Eigen::VectorXd& grad) {
  if (theta_ext.size() != spec.ext_dim()) {
    throw ArgumentError("log_posterior: parameter vector has wrong length");
  }
  detail::check_data_shape(spec, data);
  const int d = spec.d();
  const int bias_index = d;
  const Eigen::VectorXd theta = theta_ext.head(d + 1);

  double value = mixture_log_density_grad(spec.prior, theta, grad);
  grad.conservativeResize(spec.ext_dim());

  double sigma = 0.0;
  if (spec.task_kind == TaskKind::regression) {
    if (spec.samples_noise()) {
      const double s = theta_ext[d + 1];
      sigma = std::exp(s);
      // Half-Cauchy prior on sigma plus the log-transform Jacobian term s.
      value += half_cauchy_log_pdf(sigma, spec.noise_scale) + s;
      const double ratio2 = (sigma / spec.noise_scale) * (sigma / spec.noise_scale);
      grad[d + 1] = 1.0 - 2.0 * ratio2 / (1.0 + ratio2);
    } else {
      sigma = *spec.fixed_noise_sd;
    }
  }

  if (data.n() > 0) {
    const Eigen::VectorXd eta =
        data.X * theta.head(d) + Eigen::VectorXd::Constant(data.n(), theta[bias_index]);
    if (spec.task_kind == TaskKind::regression) {
      const Eigen::VectorXd resid = data.y - eta;
      const double n = static_cast<double>(data.n());
      const double rss = resid.squaredNorm();
      value += -0.5 * n * kLogTwoPi - n * std::log(sigma) - rss / (2.0 * sigma * sigma);
      const Eigen::VectorXd dldeta = resid / (sigma * sigma);
      grad.head(d) += data.X.transpose() * dldeta;
      grad[bias_index] += dldeta.sum();
      if (spec.samples_noise()) grad[d + 1] += -n + rss / (sigma * sigma);
    } else {
      for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double eta_i = eta[i];
        value += data.y[i] * log_sigmoid(eta_i) + (1.0 - data.y[i]) * log_sigmoid(-eta_i);
      }
      const Eigen::VectorXd dldeta =
          data.y - eta.unaryExpr([](double e) { return sigmoid(e); });
      grad.head(d) += data.X.transpose() * dldeta;
      grad[bias_index] += dldeta.sum();
    }
  }

  if (!std::isfinite(value)) throw NumericError("log posterior is not finite", -1);
  for (int j = 0; j < grad.size(); ++j) {
    if (!std::isfinite(grad[j])) throw NumericError("log posterior gradient is not finite", j);
  }
  return value;
}

inline double log_posterior_value(const LinearModelSpec& spec, const ModelData& data,
                                  const Eigen::VectorXd& theta_ext) {
  Eigen::VectorXd grad;
  return log_posterior(spec, data, theta_ext, grad);
}

/// Retained posterior draws with provenance and sampler health information.
struct PosteriorSampleSet {
  Eigen::MatrixXd samples;  // S x ext_dim; noise column holds sigma, not log sigma
  std::vector<int> chain_ids;
  std::vector<std::string> column_names;  // feature names, "bias" [, "noise"]
  std::vector<ChainDiagnostics> diagnostics;
  double divergence_rate = 0.0;
  TaskKind task_kind = TaskKind::regression;
  bool has_noise_column = false;

  Eigen::Index size() const { return samples.rows(); }
  int theta_dim() const {
    return static_cast<int>(samples.cols()) - (has_noise_column ? 1 : 0);
  }
};

/// Extended-parameter draws from the posterior.  The returned noise column
/// is mapped back to the sigma scale.
inline PosteriorSampleSet sample_posterior(const LinearModelSpec& spec, const ModelData& data,
                                           const std::vector<std::string>& feature_names,
                                           SamplerOptions options, std::uint64_t seed) {
  spec.validate();
  detail::check_data_shape(spec, data);
  if (static_cast<int>(feature_names.size()) != spec.d()) {
    throw ArgumentError("sample_posterior: feature name count mismatch");
  }

  TargetDensity target;
  target.dim = spec.ext_dim();
  target.log_density_grad = [&spec, &data](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    return log_posterior(spec, data, q, grad);
  };

  if (!options.initial) {
    // Start chains at prior draws so sharp mixtures are found immediately.
    Eigen::MatrixXd init = sample_prior(spec.prior, options.chains,
                                        derive_seed(seed, "posterior-init"));
    if (spec.samples_noise()) {
      init.conservativeResize(Eigen::NoChange, spec.ext_dim());
      init.col(spec.ext_dim() - 1).setZero();  // log sigma = 0
    }
    options.initial = std::move(init);
  }

  SampleRun run = sample(target, options, derive_seed(seed, "posterior"));

  PosteriorSampleSet set;
  set.samples = std::move(run.samples);
  set.chain_ids = std::move(run.chain_ids);
  set.diagnostics = std::move(run.diagnostics);
  set.divergence_rate = run.divergence_rate;
  set.task_kind = spec.task_kind;
  set.has_noise_column = spec.samples_noise();
  set.column_names = feature_names;
  set.column_names.push_back("bias");
  if (set.has_noise_column) {
    set.column_names.push_back("noise");
    const Eigen::Index noise_col = set.samples.cols() - 1;
    set.samples.col(noise_col) = set.samples.col(noise_col).array().exp();
  }
  return set;
}

/// Per-sample predictions: regression rows hold the predictive mean, and
/// classification rows hold hard labels with p = 0.5 resolving to label 1.
inline Eigen::MatrixXd posterior_predictive(const PosteriorSampleSet& set,
                                            const Eigen::MatrixXd& X_test) {
  const int d = set.theta_dim() - 1;
  if (X_test.cols() != d) throw ArgumentError("posterior_predictive: feature width mismatch");
  Eigen::MatrixXd out(set.size(), X_test.rows());
  for (Eigen::Index s = 0; s < set.size(); ++s) {
    const Eigen::VectorXd w = set.samples.row(s).head(d);
    const double bias = set.samples(s, d);
    Eigen::VectorXd eta = X_test * w + Eigen::VectorXd::Constant(X_test.rows(), bias);
    if (set.task_kind == TaskKind::classification) {
      out.row(s) = eta.unaryExpr([](double e) { return sigmoid(e) >= 0.5 ? 1.0 : 0.0; });
    } else {
      out.row(s) = eta;
    }
  }
  return out;
}

struct MetricSummary {
  Eigen::VectorXd per_sample;
  double mean = 0.0;
};

/// Accuracy (classification) or mean squared error of the predictive mean
/// (regression), one value per posterior sample, plus their mean.
inline MetricSummary evaluate(const PosteriorSampleSet& set, const ModelData& test) {
  if (test.n() < 1) throw ArgumentError("evaluate: empty test set");
  const Eigen::MatrixXd preds = posterior_predictive(set, test.X);
  MetricSummary summary;
  summary.per_sample.resize(set.size());
  for (Eigen::Index s = 0; s < set.size(); ++s) {
    if (set.task_kind == TaskKind::classification) {
      double correct = 0.0;
      for (Eigen::Index i = 0; i < test.n(); ++i) {
        if (preds(s, i) == test.y[i]) correct += 1.0;
      }
      summary.per_sample[s] = correct / static_cast<double>(test.n());
    } else {
      summary.per_sample[s] =
          (preds.row(s).transpose() - test.y).squaredNorm() / static_cast<double>(test.n());
    }
  }
  summary.mean = summary.per_sample.mean();
  return summary;
}

/// Half-Cauchy(scale) draw via the probability integral transform.
inline double sample_half_cauchy(double scale, std::mt19937_64& engine) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return scale * std::tan(0.5 * M_PI * unif(engine));
}

/// Total data log-likelihood under each of n_samples prior draws; regression
/// draws each sample's noise scale from its Half-Cauchy prior.
inline Eigen::VectorXd prior_predictive_loglik(const LinearModelSpec& spec,
                                               const ModelData& data, int n_samples,
                                               std::uint64_t seed) {
  spec.validate();
  detail::check_data_shape(spec, data);
  if (data.n() < 1) throw ArgumentError("prior_predictive_loglik: empty data subset");
  if (n_samples < 1) throw ArgumentError("prior_predictive_loglik: n_samples must be >= 1");

  const Eigen::MatrixXd thetas = sample_prior(spec.prior, n_samples, derive_seed(seed, "ppl"));
  auto engine = make_engine(derive_seed(seed, "ppl-noise"));
  const int d = spec.d();
  Eigen::VectorXd out(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd w = thetas.row(s).head(d);
    const double bias = thetas(s, d);
    const Eigen::VectorXd eta = data.X * w + Eigen::VectorXd::Constant(data.n(), bias);
    double loglik = 0.0;
    if (spec.task_kind == TaskKind::regression) {
      const double sigma =
          spec.fixed_noise_sd ? *spec.fixed_noise_sd : sample_half_cauchy(spec.noise_scale, engine);
      const double n = static_cast<double>(data.n());
      loglik = -0.5 * n * kLogTwoPi - n * std::log(sigma) -
               (data.y - eta).squaredNorm() / (2.0 * sigma * sigma);
    } else {
      for (Eigen::Index i = 0; i < data.n(); ++i) {
        loglik += data.y[i] * log_sigmoid(eta[i]) + (1.0 - data.y[i]) * log_sigmoid(-eta[i]);
      }
    }
    out[s] = loglik;
  }
  return out;
}

/// CSV layout: chain id first, then one column per named parameter.
inline std::string samples_to_csv(const PosteriorSampleSet& set) {
  std::vector<std::string> header{"chain"};
  header.insert(header.end(), set.column_names.begin(), set.column_names.end());
  CsvWriter writer(std::move(header));
  for (Eigen::Index s = 0; s < set.size(); ++s) {
    std::vector<std::string> row{std::to_string(set.chain_ids[s])};
    for (Eigen::Index j = 0; j < set.samples.cols(); ++j) {
      row.push_back(format_double(set.samples(s, j)));
    }
    writer.add_row(row);
  }
  return writer.str();
}

inline nlohmann::json diagnostics_to_json(const PosteriorSampleSet& set) {
  nlohmann::json chains = nlohmann::json::array();
  for (const auto& d : set.diagnostics) {
    nlohmann::json inv_metric = nlohmann::json::array();
    for (Eigen::Index j = 0; j < d.inv_metric.size(); ++j) inv_metric.push_back(d.inv_metric[j]);
    chains.push_back({{"chain", d.chain},
                      {"divergences", d.divergences},
                      {"acceptance_mean", d.acceptance_mean},
                      {"step_size", d.step_size},
                      {"inv_metric", std::move(inv_metric)}});
  }
  return {{"divergence_rate", set.divergence_rate}, {"chains", std::move(chains)}};
}

inline void save_samples(const PosteriorSampleSet& set, const std::filesystem::path& csv_path,
                         const std::filesystem::path& diagnostics_path) {
  write_text_file(csv_path, samples_to_csv(set));
  write_text_file(diagnostics_path, diagnostics_to_json(set).dump(2) + "\n");
}

}  // namespace lmprior
