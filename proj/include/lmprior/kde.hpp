#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "lmprior/errors.hpp"
#include "lmprior/logging.hpp"
#include "lmprior/math.hpp"
#include "lmprior/rng.hpp"

namespace lmprior {

/// Gaussian kernel density estimate with bandwidth matrix
/// H = bandwidth_factor^2 * sample covariance.  Immutable once fitted.
class GaussianKde {
 public:
  /// `samples` is n x p.  A singular sample covariance is repaired with
  /// diagonal jitter (starting at 1e-8) and a warning.
  static GaussianKde fit(const Eigen::MatrixXd& samples, double bandwidth_factor = 0.25) {
    if (samples.rows() < 2) throw ArgumentError("GaussianKde: need at least two samples");
    if (!(bandwidth_factor > 0.0)) {
      throw ArgumentError("GaussianKde: bandwidth_factor must be > 0");
    }
    GaussianKde kde;
    kde.points_ = samples;
    const Eigen::Index n = samples.rows();
    const Eigen::Index p = samples.cols();

    const Eigen::RowVectorXd mean = samples.colwise().mean();
    const Eigen::MatrixXd centered = samples.rowwise() - mean;
    Eigen::MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(n - 1);
    kde.bandwidth_ = bandwidth_factor * bandwidth_factor * cov;

    double jitter = 1e-8;
    for (;;) {
      kde.llt_.compute(kde.bandwidth_);
      if (kde.llt_.info() == Eigen::Success &&
          kde.llt_.matrixLLT().diagonal().minCoeff() > 0.0) {
        break;
      }
      log_warning("KDE bandwidth matrix singular; adding diagonal jitter " +
                  std::to_string(jitter));
      kde.bandwidth_ += jitter * Eigen::MatrixXd::Identity(p, p);
      jitter *= 10.0;
      if (jitter > 1.0) throw NumericError("KDE bandwidth cannot be regularized", -1);
    }
    double log_det = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      log_det += 2.0 * std::log(kde.llt_.matrixLLT()(j, j));
    }
    kde.log_kernel_norm_ = -0.5 * static_cast<double>(p) * kLogTwoPi - 0.5 * log_det;
    return kde;
  }

  int dim() const { return static_cast<int>(points_.cols()); }
  Eigen::Index n_points() const { return points_.rows(); }
  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::MatrixXd& bandwidth() const { return bandwidth_; }

  double log_density(const Eigen::VectorXd& x) const {
    Eigen::VectorXd grad;
    return log_density_grad(x, grad);
  }

  /// Log density and its analytic gradient
  /// sum_i r_i * H^{-1} (x_i - x) with kernel responsibilities r_i.
  double log_density_grad(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    if (x.size() != points_.cols()) throw ArgumentError("GaussianKde: dimension mismatch");
    const Eigen::Index n = points_.rows();
    Eigen::VectorXd log_terms(n);
    Eigen::MatrixXd whitened(points_.cols(), n);  // H^{-1} (x_i - x) per column
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd diff = points_.row(i).transpose() - x;
      const Eigen::VectorXd solved = llt_.solve(diff);
      whitened.col(i) = solved;
      log_terms[i] = log_kernel_norm_ - 0.5 * diff.dot(solved);
    }
    const double lse = log_sum_exp(log_terms);
    grad.setZero(points_.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      grad += std::exp(log_terms[i] - lse) * whitened.col(i);
    }
    return lse - std::log(static_cast<double>(n));
  }

  /// Mixture draw: uniform kernel index, then a Gaussian with covariance H.
  Eigen::MatrixXd sample(int n, std::uint64_t seed) const {
    if (n < 1) throw ArgumentError("GaussianKde: sample count must be >= 1");
    auto engine = make_engine(derive_seed(seed, "kde-sample"));
    std::uniform_int_distribution<Eigen::Index> pick(0, points_.rows() - 1);
    std::normal_distribution<double> standard_normal(0.0, 1.0);
    const Eigen::MatrixXd chol = llt_.matrixL();
    Eigen::MatrixXd out(n, points_.cols());
    Eigen::VectorXd z(points_.cols());
    for (int s = 0; s < n; ++s) {
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = standard_normal(engine);
      out.row(s) = points_.row(pick(engine)) + (chol * z).transpose();
    }
    return out;
  }

 private:
  GaussianKde() = default;

  Eigen::MatrixXd points_;
  Eigen::MatrixXd bandwidth_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_kernel_norm_ = 0.0;
};

}  // namespace lmprior
