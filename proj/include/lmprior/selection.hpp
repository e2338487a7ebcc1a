#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lmprior/csvio.hpp"
#include "lmprior/elicitation.hpp"
#include "lmprior/errors.hpp"
#include "lmprior/icl.hpp"
#include "lmprior/logging.hpp"
#include "lmprior/math.hpp"
#include "lmprior/stats.hpp"

namespace lmprior {

struct EnergyResult {
  double distance_sq = 0.0;  // D(X,Y)^2
  double statistic = 0.0;    // H in [0,1]
  Eigen::Index n_x = 0;
  Eigen::Index n_y = 0;
};

namespace detail {

/// Mean pairwise Euclidean distance between the rows of A and B.  When
/// `exclude_diagonal` is set (unbiased within-set variant), A and B must be
/// the same matrix.
inline double mean_pairwise_distance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     bool exclude_diagonal) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (exclude_diagonal && i == j) continue;
      sum += (A.row(i) - B.row(j)).norm();
    }
  }
  const double pairs = exclude_diagonal ? static_cast<double>(n) * (m - 1)
                                        : static_cast<double>(n) * m;
  return pairs > 0.0 ? sum / pairs : 0.0;
}

}  // namespace detail

/// Energy distance D^2 = 2 E[Mxy] - E[Mxx] - E[Myy] and the normalized
/// statistic H = D^2 / (2 E[Mxy]).  The default within-set means run over
/// all n^2 ordered pairs including the zero diagonal, which keeps H inside
/// [0,1]; pass unbiased_within=true for the diagonal-free variant.
inline EnergyResult energy(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                           bool unbiased_within = false) {
  if (X.rows() < 1 || Y.rows() < 1) throw ArgumentError("energy: both samples must be non-empty");
  if (X.cols() != Y.cols()) throw ArgumentError("energy: sample dimensions differ");

  const double exy = detail::mean_pairwise_distance(X, Y, false);
  const double exx = detail::mean_pairwise_distance(X, X, unbiased_within);
  const double eyy = detail::mean_pairwise_distance(Y, Y, unbiased_within);

  EnergyResult result;
  result.n_x = X.rows();
  result.n_y = Y.rows();
  result.distance_sq = 2.0 * exy - exx - eyy;
  // Cancellation can leave a tiny negative remainder for near-identical
  // samples; the population quantity is nonnegative.
  if (result.distance_sq < 0.0 && !unbiased_within) result.distance_sq = 0.0;
  result.statistic = exy > 0.0 ? result.distance_sq / (2.0 * exy) : 0.0;
  return result;
}

/// The elicited-versus-in-context comparison: n prior draws (weights and
/// bias) against the extracted phi samples.
inline EnergyResult compare_elicited_vs_extracted(const MixturePrior& prior,
                                                  const ExtractedDistribution& extracted,
                                                  int n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("compare_elicited_vs_extracted: n must be >= 1");
  const Eigen::MatrixXd prior_draws = sample_prior(prior, n, seed);
  const Eigen::MatrixXd phi = extracted.phi_matrix();
  if (phi.cols() != prior_draws.cols()) {
    throw ArgumentError("compare_elicited_vs_extracted: parameter dimensions differ");
  }
  return energy(prior_draws, phi);
}

/// One total log-likelihood per retained description: in-context predictions
/// on the subset's rows, scored with the same conventions as the Bayesian
/// models (cross-entropy with clamped probabilities, or a unit-variance
/// Gaussian for regression labels).
inline Eigen::VectorXd icl_prior_predictive_loglik(Gateway& gateway,
                                                   const std::vector<TaskDescription>& descriptions,
                                                   const ModelData& subset,
                                                   TaskKind model_class,
                                                   const ProbeOptions& options) {
  if (descriptions.empty()) throw ArgumentError("icl_prior_predictive_loglik: no descriptions");
  if (subset.n() < 1) throw ArgumentError("icl_prior_predictive_loglik: empty data subset");

  std::vector<double> values;
  values.reserve(descriptions.size());
  for (const auto& description : descriptions) {
    Eigen::VectorXd preds;
    try {
      preds = icl_predict(gateway, description, subset.X, std::nullopt, options, model_class);
    } catch (const Error& e) {
      log_warning("dropping description (" + std::to_string(description.origin.first) + "," +
                  std::to_string(description.origin.second) +
                  ") from likelihood scoring: " + e.what());
      continue;
    }
    double loglik = 0.0;
    for (Eigen::Index i = 0; i < subset.n(); ++i) {
      if (model_class == TaskKind::classification) {
        const double p = std::clamp(preds[i], options.probability_clamp,
                                    1.0 - options.probability_clamp);
        loglik += subset.y[i] * std::log(p) + (1.0 - subset.y[i]) * std::log(1.0 - p);
      } else {
        loglik += normal_log_pdf(subset.y[i], preds[i], 1.0);
      }
    }
    values.push_back(loglik);
  }
  if (values.empty()) {
    throw ProbeError("every description failed during likelihood scoring");
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

/// log BF = mean(loglik_a) - mean(loglik_b); positive favours a.
inline double bayes_factor(const Eigen::VectorXd& loglik_a, const Eigen::VectorXd& loglik_b) {
  if (loglik_a.size() < 1 || loglik_b.size() < 1) {
    throw ArgumentError("bayes_factor: both log-likelihood vectors must be non-empty");
  }
  return loglik_a.mean() - loglik_b.mean();
}

struct BayesFactorSplit {
  int split = 0;
  double mean_loglik_elicited = 0.0;
  double mean_loglik_icl = 0.0;
  double log_bf = 0.0;
};

struct BayesFactorReport {
  std::string dataset_id;
  std::vector<BayesFactorSplit> splits;
  double mean_log_bf = 0.0;
  double sd_log_bf = 0.0;

  void finalize() {
    if (splits.empty()) throw ArgumentError("BayesFactorReport: no splits");
    std::vector<double> bfs;
    bfs.reserve(splits.size());
    for (const auto& s : splits) bfs.push_back(s.log_bf);
    mean_log_bf = mean_of(bfs);
    sd_log_bf = splits.size() > 1 ? sample_sd(bfs) : 0.0;
  }
};

inline nlohmann::json bayes_factor_report_to_json(const BayesFactorReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& s : report.splits) {
    records.push_back({{"dataset", report.dataset_id},
                       {"split", s.split},
                       {"method", "elicited"},
                       {"mean_loglik", s.mean_loglik_elicited},
                       {"log_bf", s.log_bf}});
    records.push_back({{"dataset", report.dataset_id},
                       {"split", s.split},
                       {"method", "icl"},
                       {"mean_loglik", s.mean_loglik_icl},
                       {"log_bf", s.log_bf}});
  }
  return {{"dataset", report.dataset_id},
          {"records", std::move(records)},
          {"mean_log_bf", report.mean_log_bf},
          {"sd_log_bf", report.sd_log_bf}};
}

inline std::string bayes_factor_report_to_csv(const BayesFactorReport& report) {
  CsvWriter writer({"dataset", "split", "mean_loglik_elicited", "mean_loglik_icl", "log_bf"});
  for (const auto& s : report.splits) {
    writer.add_row({report.dataset_id, std::to_string(s.split),
                    format_double(s.mean_loglik_elicited), format_double(s.mean_loglik_icl),
                    format_double(s.log_bf)});
  }
  return writer.str();
}

}  // namespace lmprior
