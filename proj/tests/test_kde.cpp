#include <cmath>
#include <random>

#include <catch2/catch_amalgamated.hpp>

#include "lmprior/kde.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace lmprior;
using Catch::Approx;

namespace {

/// Literal mixture-of-Gaussians density: log(1/n sum_i N(x; x_i, H)).
double kde_log_density_direct(const Eigen::MatrixXd& points, const Eigen::MatrixXd& H,
                              const Eigen::VectorXd& x) {
  const Eigen::MatrixXd H_inv = H.inverse();
  const double log_norm =
      -0.5 * x.size() * kLogTwoPi - 0.5 * std::log(H.determinant());
  std::vector<double> terms;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd diff = points.row(i).transpose() - x;
    terms.push_back(log_norm - 0.5 * diff.dot(H_inv * diff));
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(points.rows()));
}

Eigen::MatrixXd gaussian_cloud(int n, int p, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) out(i, j) = normal(engine) * (j + 1.0) + 0.5 * j;
  }
  return out;
}

}  // namespace

TEST_CASE("kde bandwidth is the scaled sample covariance", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(40, 3, 1);
  const GaussianKde kde = GaussianKde::fit(points, 0.25);
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / (points.rows() - 1.0);
  CHECK((kde.bandwidth() - 0.0625 * cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(kde.dim() == 3);
  CHECK(kde.n_points() == 40);
}

TEST_CASE("kde density equals the direct kernel sum", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(25, 2, 2);
  const GaussianKde kde = GaussianKde::fit(points, 0.4);
  std::mt19937_64 engine(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd x = oracles::random_matrix(2, 1, engine, -4.0, 4.0).col(0);
    const double got = kde.log_density(x);
    const double want = kde_log_density_direct(points, kde.bandwidth(), x);
    REQUIRE(got == Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("kde gradient matches finite differences", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(30, 3, 3);
  const GaussianKde kde = GaussianKde::fit(points, 0.3);
  std::mt19937_64 engine(8);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd x = oracles::random_matrix(3, 1, engine, -3.0, 3.0).col(0);
    Eigen::VectorXd grad;
    kde.log_density_grad(x, grad);
    const Eigen::VectorXd fd = oracles::fd_gradient(
        [&](const Eigen::VectorXd& q) { return kde.log_density(q); }, x);
    REQUIRE(oracles::rel_err(grad, fd) < 1e-6);
  }
}

TEST_CASE("kde draws reproduce the smoothed moments", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(200, 2, 4);
  const GaussianKde kde = GaussianKde::fit(points, 0.25);
  const Eigen::MatrixXd draws = kde.sample(20000, 5);
  REQUIRE(draws.rows() == 20000);

  const Eigen::RowVectorXd point_mean = points.colwise().mean();
  const Eigen::RowVectorXd draw_mean = draws.colwise().mean();
  CHECK((draw_mean - point_mean).cwiseAbs().maxCoeff() < 0.08);

  // Mixture covariance: population covariance of the kernel centers plus the
  // kernel bandwidth.
  const Eigen::MatrixXd centered = points.rowwise() - point_mean;
  const Eigen::MatrixXd pop_cov = (centered.transpose() * centered) / points.rows();
  const Eigen::MatrixXd expected = pop_cov + kde.bandwidth();
  const Eigen::MatrixXd draw_centered = draws.rowwise() - draw_mean;
  const Eigen::MatrixXd draw_cov =
      (draw_centered.transpose() * draw_centered) / (draws.rows() - 1.0);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      CHECK(draw_cov(a, b) == Approx(expected(a, b)).margin(0.12 * (1 + std::abs(expected(a, b)))));
    }
  }
}

TEST_CASE("kde sampling is deterministic per seed", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(50, 2, 6);
  const GaussianKde kde = GaussianKde::fit(points);
  CHECK(kde.sample(40, 9) == kde.sample(40, 9));
  CHECK(kde.sample(40, 9) != kde.sample(40, 10));
}

TEST_CASE("a degenerate direction is repaired with jitter and a warning", "[kde]") {
  Eigen::MatrixXd points = gaussian_cloud(12, 2, 10);
  points.col(1).setConstant(3.0);  // zero variance direction
  testsupport::WarningCapture capture;
  const GaussianKde kde = GaussianKde::fit(points, 0.25);
  CHECK(capture.any_contains("jitter"));
  Eigen::VectorXd x(2);
  x << 0.0, 3.0;
  CHECK(std::isfinite(kde.log_density(x)));
  CHECK(kde.sample(10, 1).rows() == 10);
}

TEST_CASE("kde rejects malformed inputs", "[kde]") {
  const Eigen::MatrixXd points = gaussian_cloud(10, 2, 11);
  CHECK_THROWS_AS(GaussianKde::fit(points.topRows(1)), ArgumentError);
  CHECK_THROWS_AS(GaussianKde::fit(points, 0.0), ArgumentError);
  const GaussianKde kde = GaussianKde::fit(points);
  CHECK_THROWS_AS(kde.log_density(Eigen::VectorXd::Zero(3)), ArgumentError);
  CHECK_THROWS_AS(kde.sample(0, 1), ArgumentError);
}
