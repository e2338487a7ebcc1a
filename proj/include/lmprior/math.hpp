#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Core>

namespace lmprior {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

/// log(sum_i exp(v_i)), guarded against empty input and -inf entries.
inline double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& v) {
  return log_sum_exp(Eigen::Map<const Eigen::VectorXd>(
      v.data(), static_cast<Eigen::Index>(v.size())));
}

/// Incremental two-term logsumexp.
inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

/// Half-Cauchy(scale) log-density on sigma > 0.
inline double half_cauchy_log_pdf(double sigma, double scale) {
  const double z = sigma / scale;
  return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(z * z);
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

/// logit with its argument assumed in (0, 1).
inline double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace lmprior
