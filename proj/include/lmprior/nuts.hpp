#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "lmprior/errors.hpp"
#include "lmprior/math.hpp"
#include "lmprior/rng.hpp"
#include "lmprior/stats.hpp"

namespace lmprior {

/// A differentiable unnormalized log density.  The callable fills `grad`
/// (resized by the caller) and returns the log density; it may throw
/// NumericError at pathological points, which the sampler treats as a
/// divergent region rather than a fatal failure.
struct TargetDensity {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)> log_density_grad;
};

struct SamplerOptions {
  int chains = 5;
  int samples_per_chain = 5000;
  int warmup = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  double divergence_threshold = 1000.0;  // divergent when H - H0 exceeds this
  bool adapt_metric = true;
  bool use_nuts = true;  // false selects plain fixed-length HMC (debug only)
  int hmc_leapfrog_steps = 32;
  int n_threads = 0;  // 0 lets the implementation pick
  double max_divergence_rate = 0.10;
  std::optional<Eigen::MatrixXd> initial;  // chains x dim starting points

  void validate(int dim) const {
    if (chains < 1) throw ArgumentError("SamplerOptions: chains must be >= 1");
    if (samples_per_chain < 1) {
      throw ArgumentError("SamplerOptions: samples_per_chain must be >= 1");
    }
    if (warmup < 0) throw ArgumentError("SamplerOptions: warmup must be >= 0");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw ArgumentError("SamplerOptions: target_accept must lie in (0,1)");
    }
    if (max_tree_depth < 1) throw ArgumentError("SamplerOptions: max_tree_depth must be >= 1");
    if (hmc_leapfrog_steps < 1) {
      throw ArgumentError("SamplerOptions: hmc_leapfrog_steps must be >= 1");
    }
    if (initial && (initial->rows() < chains || initial->cols() != dim)) {
      throw ArgumentError("SamplerOptions: initial points must be chains x dim");
    }
  }
};

struct ChainDiagnostics {
  int chain = 0;
  int divergences = 0;          // post-warmup iterations containing a divergence
  double acceptance_mean = 0.0; // post-warmup mean acceptance statistic
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
};

struct SampleRun {
  Eigen::MatrixXd samples;  // (chains * samples_per_chain) x dim
  std::vector<int> chain_ids;
  std::vector<ChainDiagnostics> diagnostics;
  double divergence_rate = 0.0;
};

namespace detail {

/// Nesterov dual averaging of log step size (Hoffman & Gelman 2014, §3.2,
/// with Stan's gamma/t0/kappa constants).
class DualAveraging {
 public:
  DualAveraging(double eps0, double target_accept) : delta_(target_accept) { restart(eps0); }

  void restart(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = std::log(eps0);
    h_bar_ = 0.0;
    count_ = 1;
  }

  void update(double accept_stat) {
    accept_stat = std::min(accept_stat, 1.0);
    const double m = static_cast<double>(count_++);
    h_bar_ = (1.0 - 1.0 / (m + kT0)) * h_bar_ + (delta_ - accept_stat) / (m + kT0);
    log_eps_ = mu_ - std::sqrt(m) / kGamma * h_bar_;
    const double w = std::pow(m, -kKappa);
    log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
  }

  double current() const { return std::exp(log_eps_); }
  double adapted() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0, log_eps_ = 0.0, log_eps_bar_ = 0.0, h_bar_ = 0.0;
  int count_ = 1;
};

/// Warmup layout: a step-size-only prefix, expanding covariance windows
/// (sizes 25, 50, 100, ... with the remainder folded into the last), and a
/// step-size-only suffix.
struct AdaptationSchedule {
  std::vector<std::pair<int, int>> slow_windows;  // [begin, end) iteration ranges

  static AdaptationSchedule build(int warmup, bool adapt_metric) {
    AdaptationSchedule schedule;
    if (!adapt_metric || warmup < 20) return schedule;
    int init = 75, term = 50, base = 25;
    if (warmup < init + term + base) {
      init = static_cast<int>(0.15 * warmup);
      term = static_cast<int>(0.10 * warmup);
    }
    int begin = init;
    const int slow_end = warmup - term;
    int size = std::min(base, slow_end - begin);
    while (begin < slow_end && size > 0) {
      // Absorb the tail when it cannot hold the next doubled window.
      if (slow_end - begin < 2 * size) size = slow_end - begin;
      schedule.slow_windows.emplace_back(begin, begin + size);
      begin += size;
      size *= 2;
    }
    return schedule;
  }

  bool in_slow_window(int iter) const {
    for (const auto& [b, e] : slow_windows) {
      if (iter >= b && iter < e) return true;
    }
    return false;
  }

  bool at_window_end(int iter) const {
    for (const auto& [b, e] : slow_windows) {
      if (iter == e - 1) return true;
    }
    return false;
  }
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = 0.0;
};

struct Proposal {
  Eigen::VectorXd q;
  Eigen::VectorXd grad;
  double logp = 0.0;
};

struct TreeStats {
  double log_sum_w = -std::numeric_limits<double>::infinity();
  double accept_sum = 0.0;
  int n_leaf = 0;
  bool ok = false;
  bool divergent = false;
};

class ChainRunner {
 public:
  ChainRunner(const TargetDensity& target, const SamplerOptions& options, int chain_index,
              std::uint64_t seed)
      : target_(target),
        options_(options),
        chain_(chain_index),
        engine_(make_engine(seed)),
        m_inv_(Eigen::VectorXd::Ones(target.dim)) {}

  /// Runs warmup + sampling; writes retained draws into `out` starting at
  /// row `first_row`.
  ChainDiagnostics run(Eigen::MatrixXd& out, int first_row) {
    initialize();
    double eps = find_reasonable_epsilon();
    DualAveraging da(eps, options_.target_accept);
    const auto schedule = AdaptationSchedule::build(options_.warmup, options_.adapt_metric);
    Welford welford;
    std::vector<Welford> dim_welford(static_cast<std::size_t>(target_.dim));

    ChainDiagnostics diag;
    diag.chain = chain_;
    double accept_total = 0.0;
    double eps_final = eps;

    const int total = options_.warmup + options_.samples_per_chain;
    for (int iter = 0; iter < total; ++iter) {
      const bool warm = iter < options_.warmup;
      const double step = warm ? da.current() : eps_final;
      const auto result = options_.use_nuts ? nuts_transition(step) : hmc_transition(step);
      if (warm) {
        da.update(result.accept_stat);
        if (schedule.in_slow_window(iter)) {
          for (int j = 0; j < target_.dim; ++j) dim_welford[j].observe(q_[j]);
        }
        if (schedule.at_window_end(iter)) {
          update_metric(dim_welford);
          dim_welford.assign(static_cast<std::size_t>(target_.dim), Welford{});
          da.restart(find_reasonable_epsilon());
        }
        if (iter == options_.warmup - 1) eps_final = da.adapted();
      } else {
        out.row(first_row + iter - options_.warmup) = q_;
        if (result.divergent) ++diag.divergences;
        accept_total += result.accept_stat;
      }
    }
    diag.acceptance_mean = accept_total / options_.samples_per_chain;
    diag.step_size = eps_final;
    diag.inv_metric = m_inv_;
    return diag;
  }

 private:
  struct IterResult {
    double accept_stat = 0.0;
    bool divergent = false;
  };

  bool eval(const Eigen::VectorXd& q, double& logp, Eigen::VectorXd& grad) {
    grad.resize(target_.dim);
    try {
      logp = target_.log_density_grad(q, grad);
    } catch (const NumericError&) {
      return false;
    }
    return std::isfinite(logp) && grad.allFinite();
  }

  void initialize() {
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (options_.initial && attempt == 0) {
        q_ = options_.initial->row(chain_);
      } else {
        q_.resize(target_.dim);
        for (int j = 0; j < target_.dim; ++j) q_[j] = unif(engine_);
      }
      if (eval(q_, logp_, grad_)) return;
    }
    throw NumericError("sampler cannot find a finite starting density", -1);
  }

  Eigen::VectorXd draw_momentum() {
    Eigen::VectorXd p(target_.dim);
    for (int j = 0; j < target_.dim; ++j) {
      p[j] = normal_(engine_) / std::sqrt(m_inv_[j]);
    }
    return p;
  }

  double hamiltonian(const PhasePoint& z) const {
    return -z.logp + 0.5 * z.p.dot(m_inv_.cwiseProduct(z.p));
  }

  /// One leapfrog step of signed size `dir_eps`; a failed density evaluation
  /// leaves logp at -inf so the step registers as divergent.
  PhasePoint leapfrog(PhasePoint z, double dir_eps) {
    z.p += 0.5 * dir_eps * z.grad;
    z.q += dir_eps * m_inv_.cwiseProduct(z.p);
    if (!eval(z.q, z.logp, z.grad)) {
      z.logp = -std::numeric_limits<double>::infinity();
      z.grad.setZero();
    }
    z.p += 0.5 * dir_eps * z.grad;
    return z;
  }

  bool uturn(const PhasePoint& minus, const PhasePoint& plus) const {
    const Eigen::VectorXd dq = plus.q - minus.q;
    return dq.dot(m_inv_.cwiseProduct(minus.p)) < 0.0 ||
           dq.dot(m_inv_.cwiseProduct(plus.p)) < 0.0;
  }

  /// Heuristic initial step size: double/halve until one leapfrog step
  /// crosses 50% acceptance (Hoffman & Gelman 2014, Algorithm 4).
  double find_reasonable_epsilon() {
    double eps = 1.0;
    PhasePoint z{q_, draw_momentum(), grad_, logp_};
    const double h0 = hamiltonian(z);
    auto log_ratio = [&](double e) {
      const PhasePoint z1 = leapfrog(z, e);
      const double h1 = hamiltonian(z1);
      return std::isfinite(h1) ? h0 - h1 : -std::numeric_limits<double>::infinity();
    };
    constexpr double log_two = 0.6931471805599453;
    double r = log_ratio(eps);
    const double sign = r > -log_two ? 1.0 : -1.0;
    for (int i = 0; i < 100; ++i) {
      if (sign * r <= -sign * log_two) break;
      eps *= std::pow(2.0, sign);
      if (eps < 1e-10 || eps > 1e7) break;
      r = log_ratio(eps);
    }
    return eps;
  }

  void update_metric(const std::vector<Welford>& dim_welford) {
    const double n = static_cast<double>(dim_welford[0].count());
    if (n < 2) return;
    for (int j = 0; j < target_.dim; ++j) {
      const double var = dim_welford[j].variance();
      // Shrink toward unit scale exactly as Stan regularizes its diagonal
      // metric estimate.
      m_inv_[j] = var * (n / (n + 5.0)) + 1e-3 * (5.0 / (n + 5.0));
    }
  }

  struct Tree {
    PhasePoint minus, plus;
    Proposal prop;
    TreeStats stats;
  };

  Tree build_tree(const PhasePoint& z, int depth, double dir_eps, double h0) {
    if (depth == 0) {
      Tree leaf;
      const PhasePoint z1 = leapfrog(z, dir_eps);
      const double h1 = hamiltonian(z1);
      const double dh = h1 - h0;
      const bool divergent = !(dh < options_.divergence_threshold);
      leaf.minus = z1;
      leaf.plus = z1;
      leaf.prop = {z1.q, z1.grad, z1.logp};
      leaf.stats.n_leaf = 1;
      leaf.stats.divergent = divergent;
      leaf.stats.ok = !divergent;
      leaf.stats.log_sum_w = divergent ? -std::numeric_limits<double>::infinity() : -dh;
      const double ratio = std::exp(-dh);
      leaf.stats.accept_sum = std::isfinite(ratio) ? std::min(1.0, ratio) : 0.0;
      return leaf;
    }

    Tree first = build_tree(z, depth - 1, dir_eps, h0);
    if (!first.stats.ok) return first;
    const PhasePoint& grow_from = dir_eps > 0 ? first.plus : first.minus;
    Tree second = build_tree(grow_from, depth - 1, dir_eps, h0);

    Tree combined;
    combined.minus = dir_eps > 0 ? first.minus : second.minus;
    combined.plus = dir_eps > 0 ? second.plus : first.plus;
    combined.stats.log_sum_w = log_sum_exp(first.stats.log_sum_w, second.stats.log_sum_w);
    combined.stats.accept_sum = first.stats.accept_sum + second.stats.accept_sum;
    combined.stats.n_leaf = first.stats.n_leaf + second.stats.n_leaf;
    combined.stats.divergent = second.stats.divergent;
    // Unbiased multinomial draw between the two halves.
    double p_second = 0.0;
    if (std::isfinite(combined.stats.log_sum_w)) {
      p_second = std::exp(second.stats.log_sum_w - combined.stats.log_sum_w);
    }
    combined.prop = unif_(engine_) < p_second ? second.prop : first.prop;
    combined.stats.ok = second.stats.ok && !uturn(combined.minus, combined.plus);
    return combined;
  }

  IterResult nuts_transition(double eps) {
    PhasePoint z{q_, draw_momentum(), grad_, logp_};
    const double h0 = hamiltonian(z);

    PhasePoint minus = z, plus = z;
    Proposal prop{q_, grad_, logp_};
    double log_sum_w = 0.0;  // the initial point's weight exp(h0 - h0)
    double accept_sum = 0.0;
    int n_leaf = 0;
    IterResult result;

    for (int depth = 0; depth < options_.max_tree_depth; ++depth) {
      const double dir_eps = unif_(engine_) < 0.5 ? -eps : eps;
      const PhasePoint& start = dir_eps > 0 ? plus : minus;
      Tree sub = build_tree(start, depth, dir_eps, h0);
      accept_sum += sub.stats.accept_sum;
      n_leaf += sub.stats.n_leaf;
      if (sub.stats.divergent) result.divergent = true;
      if (!sub.stats.ok) break;
      if (dir_eps > 0) {
        plus = sub.plus;
      } else {
        minus = sub.minus;
      }
      // Progressive sampling biased toward the fresh subtree.
      const double log_accept = sub.stats.log_sum_w - log_sum_w;
      if (log_accept >= 0.0 || unif_(engine_) < std::exp(log_accept)) {
        prop = sub.prop;
      }
      log_sum_w = log_sum_exp(log_sum_w, sub.stats.log_sum_w);
      if (uturn(minus, plus)) break;
    }

    q_ = prop.q;
    grad_ = prop.grad;
    logp_ = prop.logp;
    result.accept_stat = n_leaf > 0 ? accept_sum / n_leaf : 0.0;
    return result;
  }

  /// Fixed-length HMC with a Metropolis correction; kept for debugging the
  /// dynamic sampler against a simpler reference.
  IterResult hmc_transition(double eps) {
    PhasePoint z{q_, draw_momentum(), grad_, logp_};
    const double h0 = hamiltonian(z);
    PhasePoint current = z;
    for (int step = 0; step < options_.hmc_leapfrog_steps; ++step) {
      current = leapfrog(current, eps);
    }
    const double h1 = hamiltonian(current);
    const double dh = h1 - h0;
    IterResult result;
    result.divergent = !(dh < options_.divergence_threshold);
    const double ratio = std::exp(-dh);
    result.accept_stat = std::isfinite(ratio) ? std::min(1.0, ratio) : 0.0;
    if (!result.divergent && unif_(engine_) < result.accept_stat) {
      q_ = current.q;
      grad_ = current.grad;
      logp_ = current.logp;
    }
    return result;
  }

  const TargetDensity& target_;
  const SamplerOptions& options_;
  int chain_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  Eigen::VectorXd m_inv_;

  Eigen::VectorXd q_, grad_;
  double logp_ = 0.0;
};

}  // namespace detail

/// Draw retained samples from `target` with the configured dynamic-trajectory
/// Hamiltonian sampler.  Deterministic per seed; chains use independent
/// derived seeds, so threading does not affect results.
inline SampleRun sample(const TargetDensity& target, const SamplerOptions& options,
                        std::uint64_t seed) {
  if (target.dim < 1 || !target.log_density_grad) {
    throw ArgumentError("sample: target needs a positive dimension and a density callback");
  }
  options.validate(target.dim);

  SampleRun run;
  const int total = options.chains * options.samples_per_chain;
  run.samples.resize(total, target.dim);
  run.chain_ids.resize(total);
  run.diagnostics.resize(options.chains);
  for (int c = 0; c < options.chains; ++c) {
    std::fill(run.chain_ids.begin() + c * options.samples_per_chain,
              run.chain_ids.begin() + (c + 1) * options.samples_per_chain, c);
  }

  std::vector<std::exception_ptr> failures(options.chains);
  auto run_chain = [&](int c) {
    try {
      detail::ChainRunner runner(target, options, c, derive_seed(seed, "chain", c));
      run.diagnostics[c] = runner.run(run.samples, c * options.samples_per_chain);
    } catch (...) {
      failures[c] = std::current_exception();
    }
  };

  int n_threads = options.n_threads > 0
                      ? options.n_threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, options.chains));
  if (n_threads == 1) {
    for (int c = 0; c < options.chains; ++c) run_chain(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t]() {
        for (int c = t; c < options.chains; c += n_threads) run_chain(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  int divergences = 0;
  for (const auto& d : run.diagnostics) divergences += d.divergences;
  run.divergence_rate = static_cast<double>(divergences) / total;
  if (run.divergence_rate > options.max_divergence_rate) {
    std::string detail_msg = "post-warmup divergence rate " +
                             std::to_string(run.divergence_rate) + " across " +
                             std::to_string(options.chains) + " chains (step sizes:";
    for (const auto& d : run.diagnostics) detail_msg += " " + std::to_string(d.step_size);
    detail_msg += ")";
    throw SamplerHealthError(detail_msg);
  }
  return run;
}

}  // namespace lmprior
