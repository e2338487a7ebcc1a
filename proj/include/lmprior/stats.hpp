#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "lmprior/errors.hpp"

namespace lmprior {

inline double mean_of(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw ArgumentError("mean_of: empty vector");
  return v.mean();
}

/// Population variance (divide by n).
inline double population_variance(const Eigen::VectorXd& v) {
  const double m = mean_of(v);
  return (v.array() - m).square().sum() / static_cast<double>(v.size());
}

/// Sample variance (divide by n-1).
inline double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) throw ArgumentError("sample_variance: need at least 2 values");
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

inline double sample_sd(const Eigen::VectorXd& v) { return std::sqrt(sample_variance(v)); }

inline Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline double mean_of(const std::vector<double>& v) { return mean_of(as_vector(v)); }
inline double population_variance(const std::vector<double>& v) {
  return population_variance(as_vector(v));
}
inline double sample_variance(const std::vector<double>& v) {
  return sample_variance(as_vector(v));
}
inline double sample_sd(const std::vector<double>& v) { return sample_sd(as_vector(v)); }

/// Online mean/variance accumulator.
class Welford {
 public:
  void observe(double x) noexcept {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept {
    return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Effective sample size of one chain via Geyer's initial monotone positive
/// sequence estimator on the empirical autocorrelations.
inline double effective_sample_size(const Eigen::VectorXd& chain) {
  const Eigen::Index n = chain.size();
  if (n < 4) return static_cast<double>(n);
  const double m = chain.mean();
  Eigen::VectorXd c = chain.array() - m;
  const double var0 = c.squaredNorm() / static_cast<double>(n);
  if (var0 <= 0.0) return static_cast<double>(n);

  auto autocov = [&](Eigen::Index lag) {
    double s = 0.0;
    for (Eigen::Index t = 0; t + lag < n; ++t) s += c[t] * c[t + lag];
    return s / static_cast<double>(n);
  };

  // Sum paired autocorrelations while the pair sums stay positive and
  // monotonically decreasing.
  double tau = 1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index lag = 1; lag + 1 < n; lag += 2) {
    const double pair = (autocov(lag) + autocov(lag + 1)) / var0;
    if (pair <= 0.0) break;
    const double capped = std::min(pair, prev_pair);
    tau += 2.0 * capped;
    prev_pair = capped;
  }
  return std::max(1.0, static_cast<double>(n) / tau);
}

/// Combined ESS of several independent chains over one coordinate.
inline double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  double total = 0.0;
  for (const auto& c : chains) total += effective_sample_size(c);
  return total;
}

/// Monte-Carlo standard error of the mean of `chain`.
inline double mc_standard_error(const Eigen::VectorXd& chain) {
  const double ess = effective_sample_size(chain);
  return std::sqrt(sample_variance(chain) / ess);
}

}  // namespace lmprior
