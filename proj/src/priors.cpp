// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/priors.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace fbc {

void PriorConfig::validate() const {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("kappa must lie in (0, 1)");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("Normal-Gamma a and b must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("Beta alpha must be positive");
}

double VCoefficients::log_v(int t) const {
  if (t < 1) throw std::out_of_range("log_v: t must be at least 1");
  if (t > n_) return -std::numeric_limits<double>::infinity();
  if (t > t_max_) throw std::out_of_range("log_v: t = " + std::to_string(t) + " beyond table size");
  return log_v_[t - 1];
}

VCoefficients compute_log_v(int n, int t_max, double gamma, double kappa) {
  if (n < 1) throw std::invalid_argument("compute_log_v: n must be positive");
  if (t_max < 1 || t_max > n) throw std::invalid_argument("compute_log_v: need 1 <= t_max <= n");
  if (!(gamma > 0.0) || !(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("compute_log_v: gamma > 0 and kappa in (0,1) required");

  constexpr double kCutoff = 40.0;
  constexpr int kMaxTerms = 10'000'000;
  const double log_kappa = std::log(kappa);
  const double log_fail = std::log1p(-kappa);

  std::vector<double> log_v(t_max);
  for (int t = 1; t <= t_max; ++t) {
    double running = -std::numeric_limits<double>::infinity();
    for (int k = t; k < t + kMaxTerms; ++k) {
      // log k_(t) - log (gamma k)^(n) + log p_K(k)
      const double term = std::lgamma(k + 1.0) - std::lgamma(k - t + 1.0) -
                          log_rising_factorial(gamma * k, n) + log_kappa + (k - 1) * log_fail;
      running = log_add_exp(running, term);
      if (term < running - kCutoff && k > t + 10) break;
    }
    log_v[t - 1] = running;
  }
  return VCoefficients(n, t_max, gamma, kappa, std::move(log_v));
}

double log_partition_prior(const Partition& partition, const VCoefficients& v) {
  if (partition.size() != v.n()) throw DimensionError("partition size differs from V table n");
  double lp = v.log_v(partition.num_clusters());
  for (int size : partition.block_sizes()) lp += log_rising_factorial(v.gamma(), size);
  return lp;
}

double NormalGamma::log_marginal(const Stats& s) const {
  return log_marginal_from(s.n, s.sum.sum + s.sum.comp, s.sumsq.sum + s.sumsq.comp);
}

double NormalGamma::log_marginal_merged(const Stats& s, const Stats& t) const {
  return log_marginal_from(s.n + t.n, s.sum.sum + s.sum.comp + t.sum.sum + t.sum.comp,
                           s.sumsq.sum + s.sumsq.comp + t.sumsq.sum + t.sumsq.comp);
}

NormalGamma::Params NormalGamma::sample_posterior(const Stats& s, Rng& rng) const {
  const Eigen::ArrayXd s1 = s.sum.value();
  const Eigen::ArrayXd s2 = s.sumsq.value();
  const double shape = a_ + 0.5 * s.n;
  const double precision_scale = s.n + 1.0;
  Params p{Eigen::ArrayXd(dim_), Eigen::ArrayXd(dim_)};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < dim_; ++k) {
    const double rate = b_ + 0.5 * std::max(0.0, s2[k] - s1[k] * s1[k] / precision_scale);
    p.lambda[k] = std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
    p.mu[k] = s1[k] / precision_scale + normal(rng) / std::sqrt(p.lambda[k] * precision_scale);
  }
  return p;
}

double BetaBernoulli::log_marginal_from(int n, const Eigen::ArrayXi& ones) const {
  if (n == 0) return 0.0;
  const double norm = std::lgamma(2.0 * alpha_) - 2.0 * std::lgamma(alpha_) - std::lgamma(2.0 * alpha_ + n);
  double total = dim_ * norm;
  for (Eigen::Index k = 0; k < ones.size(); ++k)
    total += std::lgamma(alpha_ + ones[k]) + std::lgamma(alpha_ + (n - ones[k]));
  return total;
}

double BetaBernoulli::log_marginal(const Stats& s) const { return log_marginal_from(s.n, s.ones); }

double BetaBernoulli::log_marginal_merged(const Stats& s, const Stats& t) const {
  return log_marginal_from(s.n + t.n, s.ones + t.ones);
}

BetaBernoulli::Params BetaBernoulli::sample_posterior(const Stats& s, Rng& rng) const {
  Params p{Eigen::ArrayXd(dim_)};
  for (int k = 0; k < dim_; ++k) {
    const double x = std::gamma_distribution<double>(alpha_ + s.ones[k], 1.0)(rng);
    const double y = std::gamma_distribution<double>(alpha_ + (s.n - s.ones[k]), 1.0)(rng);
    // Keep p strictly inside (0, 1) so log densities stay finite.
    p.p[k] = std::clamp(x / (x + y), 1e-300, 1.0 - 1e-16);
  }
  return p;
}

}  // namespace fbc
