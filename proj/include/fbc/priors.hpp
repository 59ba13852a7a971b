// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "fbc/core.hpp"
#include "fbc/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace fbc {

/// Hyperparameters shared by every prior in the model.
struct PriorConfig {
  double gamma = 1.0;  // symmetric Dirichlet concentration
  double kappa = 0.1;  // Geometric(kappa) prior on K
  double tau = 1.0;    // matching-map energy temperature
  double a = 1.0;      // Normal-Gamma shape
  double b = 1.0;      // Normal-Gamma rate
  double alpha = 1.0;  // symmetric Beta(alpha, alpha)

  void validate() const;
};

/// Table of log V_n(t), t = 1..t_max, for the MFM partition prior with a
/// Geometric(kappa) prior on the number of components.
class VCoefficients {
 public:
  VCoefficients() = default;
  VCoefficients(int n, int t_max, double gamma, double kappa, std::vector<double> log_v)
      : n_(n), t_max_(t_max), gamma_(gamma), kappa_(kappa), log_v_(std::move(log_v)) {}

  /// log V_n(t) for 1 <= t <= t_max; -inf for t > n (no such partition).
  double log_v(int t) const;
  int n() const { return n_; }
  int t_max() const { return t_max_; }
  double gamma() const { return gamma_; }
  double kappa() const { return kappa_; }

 private:
  int n_ = 0;
  int t_max_ = 0;
  double gamma_ = 1.0;
  double kappa_ = 0.5;
  std::vector<double> log_v_;
};

/// Sums k_(t) / (gamma k)^(n) p_K(k) over k >= t in log space. A series is cut once a
/// term falls 28 nats below the running sum and k > t + 10.
VCoefficients compute_log_v(int n, int t_max, double gamma, double kappa);

/// log V_n(t) + sum_c log gamma^(|c|).
double log_partition_prior(const Partition& partition, const VCoefficients& v);

/// log e(T) = -sum_j D(X0_T(j), X1_j) / (n1 tau). `dist(j)` returns the matched distance of j.
template <typename DistanceFn>
double log_energy(const std::vector<int>& T, DistanceFn&& dist, int n1, double tau) {
  double total = 0.0;
  for (int j = 0; j < static_cast<int>(T.size()); ++j) total += dist(j);
  return -total / (static_cast<double>(n1) * tau);
}

/// Normal likelihood with independent Normal-Gamma priors per dimension:
/// lambda ~ Gamma(a, b), mu | lambda ~ N(0, 1/lambda).
class NormalGamma {
 public:
  struct Stats {
    int n = 0;
    CompensatedArray<double> sum;
    CompensatedArray<double> sumsq;
  };

  struct Params {
    Eigen::ArrayXd mu;
    Eigen::ArrayXd lambda;
  };

  NormalGamma() = default;
  NormalGamma(int dim, double a, double b) : dim_(dim), a_(a), b_(b) {}
  NormalGamma(int dim, const PriorConfig& prior) : NormalGamma(dim, prior.a, prior.b) {}

  static constexpr const char* name() { return "normal-gamma"; }
  int dim() const { return dim_; }

  Stats empty() const { return {0, CompensatedArray<double>(dim_), CompensatedArray<double>(dim_)}; }
  static void clear(Stats& s) {
    s.n = 0;
    s.sum.sum.setZero();
    s.sum.comp.setZero();
    s.sumsq.sum.setZero();
    s.sumsq.comp.setZero();
  }
  /// Largest absolute difference over count, sum and sum of squares.
  static double stats_error(const Stats& s, const Stats& t) {
    return std::max({static_cast<double>(std::abs(s.n - t.n)), (s.sum.value() - t.sum.value()).abs().maxCoeff(),
                     (s.sumsq.value() - t.sumsq.value()).abs().maxCoeff()});
  }

  template <typename Derived>
  void add(Stats& s, const Eigen::MatrixBase<Derived>& x) const {
    s.sum.add(x.transpose().array());
    s.sumsq.add(x.transpose().array().square());
    ++s.n;
  }

  template <typename Derived>
  void remove(Stats& s, const Eigen::MatrixBase<Derived>& x) const {
    s.sum.add(-x.transpose().array());
    s.sumsq.add(-x.transpose().array().square());
    --s.n;
  }

  void merge(Stats& into, const Stats& other) const {
    into.sum.add(other.sum);
    into.sumsq.add(other.sumsq);
    into.n += other.n;
  }

  void unmerge(Stats& from, const Stats& other) const {
    from.sum.subtract(other.sum);
    from.sumsq.subtract(other.sumsq);
    from.n -= other.n;
  }

  double log_marginal(const Stats& s) const;
  /// log m of the union of two disjoint point sets.
  double log_marginal_merged(const Stats& s, const Stats& t) const;

  Params sample_prior(Rng& rng) const { return sample_posterior(empty(), rng); }
  Params sample_posterior(const Stats& s, Rng& rng) const;

  template <typename Derived>
  double log_density(const Eigen::MatrixBase<Derived>& x, const Params& p) const {
    return 0.5 * (p.lambda.log() - kLogTwoPi - p.lambda * (x.transpose().array() - p.mu).square()).sum();
  }

  double a() const { return a_; }
  double b() const { return b_; }

 private:
  template <typename D1, typename D2>
  double log_marginal_from(int n, const Eigen::ArrayBase<D1>& s1, const Eigen::ArrayBase<D2>& s2) const {
    if (n == 0) return 0.0;
    // Posterior rate with prior mean 0 and unit pseudo-count: b + (S2 - S1^2 / (n + 1)) / 2.
    const double shape = a_ + 0.5 * n;
    const double log_rate_sum = (b_ + 0.5 * (s2 - s1.square() / (n + 1.0)).max(0.0)).log().sum();
    const double per_dim = std::lgamma(shape) - std::lgamma(a_) + a_ * std::log(b_) -
                           0.5 * std::log(n + 1.0) - 0.5 * n * kLogTwoPi;
    return dim_ * per_dim - shape * log_rate_sum;
  }

  int dim_ = 0;
  double a_ = 1.0;
  double b_ = 1.0;
};

/// Product of Bernoullis with symmetric Beta(alpha, alpha) priors per dimension.
class BetaBernoulli {
 public:
  struct Stats {
    int n = 0;
    Eigen::ArrayXi ones;
  };

  struct Params {
    Eigen::ArrayXd p;
  };

  BetaBernoulli() = default;
  BetaBernoulli(int dim, double alpha) : dim_(dim), alpha_(alpha) {}
  BetaBernoulli(int dim, const PriorConfig& prior) : BetaBernoulli(dim, prior.alpha) {}

  static constexpr const char* name() { return "beta-bernoulli"; }
  int dim() const { return dim_; }

  Stats empty() const { return {0, Eigen::ArrayXi::Zero(dim_)}; }
  static void clear(Stats& s) {
    s.n = 0;
    s.ones.setZero();
  }
  static double stats_error(const Stats& s, const Stats& t) {
    return std::max(static_cast<double>(std::abs(s.n - t.n)),
                    static_cast<double>((s.ones - t.ones).abs().maxCoeff()));
  }

  template <typename Derived>
  void add(Stats& s, const Eigen::MatrixBase<Derived>& x) const {
    check_binary(x);
    s.ones += x.transpose().array().template cast<int>();
    ++s.n;
  }

  template <typename Derived>
  void remove(Stats& s, const Eigen::MatrixBase<Derived>& x) const {
    s.ones -= x.transpose().array().template cast<int>();
    --s.n;
  }

  void merge(Stats& into, const Stats& other) const {
    into.ones += other.ones;
    into.n += other.n;
  }

  void unmerge(Stats& from, const Stats& other) const {
    from.ones -= other.ones;
    from.n -= other.n;
  }

  double log_marginal(const Stats& s) const;
  double log_marginal_merged(const Stats& s, const Stats& t) const;

  Params sample_prior(Rng& rng) const { return sample_posterior(empty(), rng); }
  Params sample_posterior(const Stats& s, Rng& rng) const;

  template <typename Derived>
  double log_density(const Eigen::MatrixBase<Derived>& x, const Params& p) const {
    const auto v = x.transpose().array();
    return (v * p.p.log() + (1.0 - v) * (1.0 - p.p).log()).sum();
  }

  double alpha() const { return alpha_; }

 private:
  template <typename Derived>
  static void check_binary(const Eigen::MatrixBase<Derived>& x) {
    if (((x.array() != 0.0) && (x.array() != 1.0)).any())
      throw InvalidData("Beta-Bernoulli family requires 0/1 features");
  }

  double log_marginal_from(int n, const Eigen::ArrayXi& ones) const;

  int dim_ = 0;
  double alpha_ = 1.0;
};

}  // namespace fbc
