#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "lmprior/csvio.hpp"
#include "lmprior/dataset.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/gateway.hpp"
#include "lmprior/kde.hpp"
#include "lmprior/logging.hpp"
#include "lmprior/math.hpp"
#include "lmprior/model.hpp"
#include "lmprior/nuts.hpp"
#include "lmprior/prompts.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

/// How the implicit in-context model is probed: fresh uniform inputs, a
/// few repetitions per task description, and the assumed model class.
struct ProbeDesign {
  int n_points = 25;
  int repetitions = 5;
  double input_low = -5.0;
  double input_high = 5.0;
  TaskKind model_class = TaskKind::regression;

  void validate(int d) const {
    if (n_points < d + 1) {
      throw ArgumentError("ProbeDesign: n_points must be >= d+1 for an identifiable fit");
    }
    if (repetitions < 1) throw ArgumentError("ProbeDesign: repetitions must be >= 1");
    if (!(input_low < input_high)) throw ArgumentError("ProbeDesign: need input_low < input_high");
  }
};

/// One maximum-likelihood fit to one batch of in-context predictions.
struct MLEParamSample {
  Eigen::VectorXd phi;  // weights then bias
  double approximation_mse = 0.0;
  std::pair<int, int> description_origin{0, 0};
  int repetition = 0;
};

enum class ExtractionKind { prior, posterior };

/// MLE samples of the implicit in-context model; `demos` is present exactly
/// when the samples characterize a posterior.
struct ExtractedDistribution {
  ExtractionKind kind = ExtractionKind::prior;
  std::vector<MLEParamSample> samples;
  std::optional<ModelData> demos;
  std::vector<std::string> feature_names;

  void validate() const {
    if (kind == ExtractionKind::posterior && !demos) {
      throw ArgumentError("ExtractedDistribution: posterior extraction requires demos");
    }
    if (kind == ExtractionKind::prior && demos) {
      throw ArgumentError("ExtractedDistribution: prior extraction must not carry demos");
    }
  }

  /// Samples as a matrix, one phi per row.
  Eigen::MatrixXd phi_matrix() const {
    if (samples.empty()) throw ArgumentError("ExtractedDistribution: no samples");
    Eigen::MatrixXd out(samples.size(), samples[0].phi.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.row(i) = samples[i].phi;
    return out;
  }
};

namespace detail {

inline std::string format_fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

inline std::string demo_line(const Eigen::RowVectorXd& features, double label) {
  std::string line = "features: [";
  for (Eigen::Index j = 0; j < features.size(); ++j) {
    if (j > 0) line += ", ";
    line += format_fixed4(features[j]);
  }
  line += "] -> label: " + format_fixed4(label);
  return line;
}

inline std::string input_line(const Eigen::RowVectorXd& features) {
  std::string line = "features: [";
  for (Eigen::Index j = 0; j < features.size(); ++j) {
    if (j > 0) line += ", ";
    line += format_fixed4(features[j]);
  }
  line += "]";
  return line;
}

}  // namespace detail

struct ProbeOptions {
  std::string model_id;
  double temperature = 0.1;
  int retry_limit = 3;
  double probability_clamp = 1e-3;  // epsilon_p for the logit transform
  int n_threads = 1;
};

/// The prediction request appended after the task description.  Kept
/// deterministic so replayed cache keys stay stable.
inline std::string probe_user_message(const Eigen::MatrixXd& X, TaskKind model_class,
                                      const std::optional<ModelData>& demos) {
  std::string msg;
  if (demos && demos->n() > 0) {
    msg += "Here are demonstration examples from the dataset:\n";
    for (Eigen::Index i = 0; i < demos->n(); ++i) {
      msg += detail::demo_line(demos->X.row(i), demos->y[i]) + "\n";
    }
    msg += "\n";
  }
  msg += model_class == TaskKind::regression
             ? "Predict the regression label for each of the following inputs.\n"
             : "Predict the positive classification probability (a number between 0 and 1) "
               "for each of the following inputs.\n";
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    msg += detail::input_line(X.row(i)) + "\n";
  }
  msg += "\nRespond with a JSON object of the form {\"predictions\": [p1, p2, ...]} "
         "containing exactly " +
         std::to_string(X.rows()) +
         " numbers, one per input row, in order. Only respond with JSON.";
  return msg;
}

/// One prediction per probe row, parsed from the model's JSON reply.
/// Invalid replies (wrong count, non-numeric, classification values outside
/// [0,1]) are re-asked up to the retry limit before a ProbeError.
inline Eigen::VectorXd icl_predict(Gateway& gateway, const TaskDescription& description,
                                   const Eigen::MatrixXd& X,
                                   const std::optional<ModelData>& demos,
                                   const ProbeOptions& options,
                                   TaskKind model_class) {
  if (X.rows() < 1) throw ArgumentError("icl_predict: no probe inputs");
  ChatRequest request;
  request.model_id = options.model_id;
  request.temperature = options.temperature;
  request.messages = {{"system", description.system},
                      {"user", description.user},
                      {"user", probe_user_message(X, model_class, demos)}};

  std::string last_reason;
  for (int attempt = 0; attempt <= options.retry_limit; ++attempt) {
    if (attempt > 0) {
      request.messages.push_back(
          {"user", "Your previous answer was invalid (" + last_reason +
                       "). Respond with a JSON object {\"predictions\": [...]} holding exactly " +
                       std::to_string(X.rows()) + " numbers."});
    }
    nlohmann::json reply;
    try {
      reply = gateway.complete_json(request, options.retry_limit);
    } catch (const ElicitationParseError& e) {
      throw ProbeError(std::string("probe reply never parsed as JSON: ") + e.what());
    }
    const auto it = reply.find("predictions");
    if (it == reply.end() || !it->is_array()) {
      last_reason = "missing 'predictions' array";
      continue;
    }
    if (static_cast<Eigen::Index>(it->size()) != X.rows()) {
      last_reason = "expected " + std::to_string(X.rows()) + " numbers, got " +
                    std::to_string(it->size());
      continue;
    }
    Eigen::VectorXd preds(X.rows());
    bool ok = true;
    for (Eigen::Index i = 0; i < X.rows() && ok; ++i) {
      const auto& cell = (*it)[static_cast<std::size_t>(i)];
      if (!cell.is_number()) {
        last_reason = "non-numeric prediction at index " + std::to_string(i);
        ok = false;
        break;
      }
      preds[i] = cell.get<double>();
      if (!std::isfinite(preds[i])) {
        last_reason = "non-finite prediction at index " + std::to_string(i);
        ok = false;
      } else if (model_class == TaskKind::classification &&
                 (preds[i] < 0.0 || preds[i] > 1.0)) {
        last_reason = "probability outside [0,1] at index " + std::to_string(i);
        ok = false;
      }
    }
    if (ok) return preds;
  }
  throw ProbeError("probe kept returning invalid predictions: " + last_reason);
}

/// Ordinary least squares through the normal equations, with an intercept
/// column.  Logistic-class predictions are mapped to logits first, with
/// probabilities clamped away from 0 and 1.
inline MLEParamSample fit_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& predictions,
                              TaskKind model_class, double probability_clamp = 1e-3) {
  if (predictions.size() != X.rows()) throw ArgumentError("fit_mle: prediction count mismatch");
  if (X.rows() < X.cols() + 1) throw ArgumentError("fit_mle: need at least d+1 points");

  Eigen::VectorXd y = predictions;
  if (model_class == TaskKind::classification) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y[i] = logit(std::clamp(y[i], probability_clamp, 1.0 - probability_clamp));
    }
  }

  Eigen::MatrixXd design(X.rows(), X.cols() + 1);
  design.leftCols(X.cols()) = X;
  design.col(X.cols()).setOnes();

  const Eigen::MatrixXd gram = design.transpose() * design;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  if (!lu.isInvertible()) {
    throw SingularDesignError("fit_mle: design matrix is rank deficient");
  }
  MLEParamSample sample;
  sample.phi = lu.solve(design.transpose() * y);
  const Eigen::VectorXd residual = design * sample.phi - y;
  sample.approximation_mse = residual.squaredNorm() / static_cast<double>(y.size());
  return sample;
}

/// Fresh probe inputs for one (description, repetition) cell; depends only
/// on the experiment seed, the description origin, and the repetition.
inline Eigen::MatrixXd probe_inputs(const ProbeDesign& design, int d,
                                    std::pair<int, int> origin, int repetition,
                                    std::uint64_t seed) {
  const std::string label = "probe-x-" + std::to_string(origin.first) + "-" +
                            std::to_string(origin.second);
  auto engine = make_engine(derive_seed(seed, label, repetition));
  std::uniform_real_distribution<double> unif(design.input_low, design.input_high);
  Eigen::MatrixXd X(design.n_points, d);
  for (int i = 0; i < design.n_points; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = unif(engine);
  }
  return X;
}

/// K descriptions x repetitions MLE samples of the implicit in-context
/// model.  A description whose repetitions cannot all be completed is
/// dropped entirely (with a warning) so that
/// samples.size() == retained_descriptions * repetitions always holds.
inline ExtractedDistribution extract_distribution(Gateway& gateway,
                                                  const std::vector<TaskDescription>& descriptions,
                                                  const ProbeDesign& design,
                                                  const std::vector<std::string>& feature_names,
                                                  const std::optional<ModelData>& demos,
                                                  const ProbeOptions& options,
                                                  std::uint64_t seed) {
  if (descriptions.empty()) throw ArgumentError("extract_distribution: no descriptions");
  const int d = static_cast<int>(feature_names.size());
  design.validate(d);
  if (demos && demos->X.cols() != d) {
    throw ArgumentError("extract_distribution: demo feature width mismatch");
  }

  const int n_desc = static_cast<int>(descriptions.size());
  std::vector<std::vector<MLEParamSample>> per_description(n_desc);
  std::vector<bool> retained(n_desc, false);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= n_desc) return;
      std::vector<MLEParamSample> batch;
      batch.reserve(design.repetitions);
      try {
        for (int r = 0; r < design.repetitions; ++r) {
          const Eigen::MatrixXd X =
              probe_inputs(design, d, descriptions[k].origin, r, seed);
          const Eigen::VectorXd preds = icl_predict(gateway, descriptions[k], X, demos,
                                                    options, design.model_class);
          MLEParamSample sample =
              fit_mle(X, preds, design.model_class, options.probability_clamp);
          sample.description_origin = descriptions[k].origin;
          sample.repetition = r;
          batch.push_back(std::move(sample));
        }
        per_description[k] = std::move(batch);
        retained[k] = true;
      } catch (const Error& e) {
        log_warning("dropping description (" + std::to_string(descriptions[k].origin.first) +
                    "," + std::to_string(descriptions[k].origin.second) +
                    ") from extraction: " + e.what());
      }
    }
  };
  const int n_threads = std::max(1, std::min(options.n_threads, n_desc));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExtractedDistribution dist;
  dist.kind = demos ? ExtractionKind::posterior : ExtractionKind::prior;
  dist.demos = demos;
  dist.feature_names = feature_names;
  for (int k = 0; k < n_desc; ++k) {
    if (!retained[k]) continue;
    for (auto& s : per_description[k]) dist.samples.push_back(std::move(s));
  }
  if (dist.samples.empty()) {
    throw ProbeError("every description failed during in-context extraction");
  }
  dist.validate();
  return dist;
}

inline GaussianKde kde_fit(const ExtractedDistribution& dist, double bandwidth_factor = 0.25) {
  return GaussianKde::fit(dist.phi_matrix(), bandwidth_factor);
}

struct McPosteriorOptions {
  int chains = 100;
  int samples_per_chain = 10000;
  int adaptation = 1000;
  TaskKind model_class = TaskKind::regression;
  double noise_sd = 1.0;  // regression likelihood scale
  int n_threads = 0;
};

/// Gradient-based MCMC targeting log KDE prior + data log-likelihood, used
/// to test whether in-context updates track Bayesian updates of the
/// extracted prior.  Zero-row data reduces the target to the KDE itself.
inline SampleRun mc_posterior_on_extracted_prior(const GaussianKde& kde, const ModelData& data,
                                                 const McPosteriorOptions& options,
                                                 std::uint64_t seed) {
  const int dim = kde.dim();
  if (data.n() > 0 && data.X.cols() != dim - 1) {
    throw ArgumentError("mc_posterior_on_extracted_prior: data width must be dim-1");
  }
  if (!(options.noise_sd > 0.0)) {
    throw ArgumentError("mc_posterior_on_extracted_prior: noise_sd must be > 0");
  }

  TargetDensity target;
  target.dim = dim;
  target.log_density_grad = [&kde, &data, &options](const Eigen::VectorXd& q,
                                                    Eigen::VectorXd& grad) {
    double value = kde.log_density_grad(q, grad);
    if (data.n() > 0) {
      const int d = static_cast<int>(q.size()) - 1;
      const Eigen::VectorXd eta =
          data.X * q.head(d) + Eigen::VectorXd::Constant(data.n(), q[d]);
      if (options.model_class == TaskKind::regression) {
        const double s2 = options.noise_sd * options.noise_sd;
        const Eigen::VectorXd resid = data.y - eta;
        value += -0.5 * static_cast<double>(data.n()) * kLogTwoPi -
                 static_cast<double>(data.n()) * std::log(options.noise_sd) -
                 resid.squaredNorm() / (2.0 * s2);
        const Eigen::VectorXd dldeta = resid / s2;
        grad.head(d) += data.X.transpose() * dldeta;
        grad[d] += dldeta.sum();
      } else {
        for (Eigen::Index i = 0; i < data.n(); ++i) {
          value += data.y[i] * log_sigmoid(eta[i]) + (1.0 - data.y[i]) * log_sigmoid(-eta[i]);
        }
        const Eigen::VectorXd dldeta =
            data.y - eta.unaryExpr([](double e) { return sigmoid(e); });
        grad.head(d) += data.X.transpose() * dldeta;
        grad[d] += dldeta.sum();
      }
    }
    if (!std::isfinite(value)) throw NumericError("KDE posterior density overflow", -1);
    return value;
  };

  SamplerOptions sampler_options;
  sampler_options.chains = options.chains;
  sampler_options.samples_per_chain = options.samples_per_chain;
  sampler_options.warmup = options.adaptation;
  sampler_options.n_threads = options.n_threads;
  sampler_options.initial = kde.sample(options.chains, derive_seed(seed, "kde-init"));
  return sample(target, sampler_options, derive_seed(seed, "kde-posterior"));
}

/// CSV layout: origin columns, repetition, one column per phi coordinate
/// (features then bias), then the approximation error.
inline std::string extraction_to_csv(const ExtractedDistribution& dist) {
  std::vector<std::string> header{"system_variant", "user_variant", "repetition"};
  header.insert(header.end(), dist.feature_names.begin(), dist.feature_names.end());
  header.push_back("bias");
  header.push_back("mse");
  CsvWriter writer(std::move(header));
  for (const auto& s : dist.samples) {
    std::vector<std::string> row{std::to_string(s.description_origin.first),
                                 std::to_string(s.description_origin.second),
                                 std::to_string(s.repetition)};
    for (Eigen::Index j = 0; j < s.phi.size(); ++j) row.push_back(format_double(s.phi[j]));
    row.push_back(format_double(s.approximation_mse));
    writer.add_row(row);
  }
  return writer.str();
}

inline void save_extraction(const ExtractedDistribution& dist,
                            const std::filesystem::path& path) {
  write_text_file(path, extraction_to_csv(dist));
}

}  // namespace lmprior
