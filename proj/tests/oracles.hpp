// Apache License, Version 2.0, refer to LICENSE.txt
//
// Independent reference computations used by the tests. Nothing here calls into the
// library's likelihood or prior code.

#pragma once

#include "fbc/core.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

/// Every set partition of [n] as a restricted growth string.
inline std::vector<std::vector<int>> set_partitions(int n) {
  std::vector<std::vector<int>> out;
  if (n == 0) return {{}};
  std::vector<int> a(n, 0), peak(n, 0);
  while (true) {
    out.push_back(a);
    int i = n - 1;
    while (i > 0 && a[i] == peak[i - 1] + 1) --i;
    if (i == 0) break;
    ++a[i];
    peak[i] = std::max(peak[i - 1], a[i]);
    for (int j = i + 1; j < n; ++j) {
      a[j] = 0;
      peak[j] = peak[i];
    }
  }
  return out;
}

inline int num_blocks(const std::vector<int>& rgs) {
  return rgs.empty() ? 0 : *std::max_element(rgs.begin(), rgs.end()) + 1;
}

/// V_n(t) by plain summation of the series in long double up to k_max.
inline long double series_v(int n, int t, double gamma, double kappa, int k_max = 4000) {
  long double total = 0.0L;
  for (int k = t; k <= k_max; ++k) {
    long double log_term = std::lgamma(k + 1.0L) - std::lgamma(k - t + 1.0L);
    log_term -= std::lgamma(gamma * k + n + 0.0L) - std::lgamma(gamma * k + 0.0L);
    log_term += std::log(static_cast<long double>(kappa)) + (k - 1) * std::log1p(-static_cast<long double>(kappa));
    total += std::exp(log_term);
  }
  return total;
}

/// log of the Normal-Gamma marginal of 1-D points by 2-D adaptive quadrature over (mu, lambda).
inline double quadrature_log_marginal(const std::vector<double>& x, double a, double b) {
  using boost::math::quadrature::gauss_kronrod;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double log_norm = a * std::log(b) - std::lgamma(a);
  auto density = [&](double mu, double lambda) {
    double log_f = log_norm + (a - 1.0) * std::log(lambda) - b * lambda;
    log_f += 0.5 * std::log(lambda / (2.0 * M_PI)) - 0.5 * lambda * mu * mu;
    for (double v : x) log_f += 0.5 * std::log(lambda / (2.0 * M_PI)) - 0.5 * lambda * (v - mu) * (v - mu);
    return std::exp(log_f);
  };
  auto over_mu = [&](double lambda) {
    if (lambda <= 0.0) return 0.0;
    auto f = [&](double mu) { return density(mu, lambda); };
    return gauss_kronrod<double, 61>::integrate(f, -inf, inf, 12, 1e-10);
  };
  return std::log(gauss_kronrod<double, 61>::integrate(over_mu, 0.0, inf, 12, 1e-10));
}

/// log of the Normal-Gamma marginal of d-dimensional points as a product of sequential
/// Student-t predictives (prior mean 0, unit pseudo-count, shape a, rate b).
inline double predictive_log_marginal(const std::vector<std::vector<double>>& points, double a, double b) {
  if (points.empty()) return 0.0;
  const std::size_t d = points[0].size();
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double n = 0.0, mean = 0.0, ss = 0.0;
    for (const auto& p : points) {
      const double kn = 1.0 + n;
      const double mun = n * mean / kn;
      const double an = a + 0.5 * n;
      const double bn = b + 0.5 * ss + 0.5 * n * mean * mean / kn;
      const double scale2 = bn * (kn + 1.0) / (an * kn);
      const double nu = 2.0 * an;
      const double z = (p[k] - mun) * (p[k] - mun) / scale2;
      total += std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI * scale2) -
               0.5 * (nu + 1.0) * std::log1p(z / nu);
      const double delta = p[k] - mean;
      n += 1.0;
      mean += delta / n;
      ss += delta * (p[k] - mean);
    }
  }
  return total;
}

/// Beta-Bernoulli marginal as the product of Polya-urn draw probabilities.
inline double polya_urn_marginal(const std::vector<std::vector<int>>& points, double alpha) {
  if (points.empty()) return 1.0;
  double prob = 1.0;
  for (std::size_t k = 0; k < points[0].size(); ++k) {
    double ones = 0.0, zeros = 0.0;
    for (const auto& p : points) {
      prob *= (p[k] ? alpha + ones : alpha + zeros) / (2.0 * alpha + ones + zeros);
      (p[k] ? ones : zeros) += 1.0;
    }
  }
  return prob;
}

/// Minimum assignment cost over every injective row-to-column map.
inline double brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  std::vector<int> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, cols[i]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Fairness gap straight from the defining sum, two groups.
inline double two_group_delta(const std::vector<int>& z0, const std::vector<int>& z1, int k) {
  double total = 0.0;
  for (int c = 1; c <= k; ++c) {
    const double p0 = static_cast<double>(std::count(z0.begin(), z0.end(), c)) / z0.size();
    const double p1 = static_cast<double>(std::count(z1.begin(), z1.end(), c)) / z1.size();
    total += std::abs(p0 - p1);
  }
  return 0.5 * total;
}

/// Exact conditional posterior over partitions of the reference group given fixed routes of
/// the other group's points: p(C) proportional to V(t) prod gamma^(|c|) prod m(X^c).
inline std::map<std::vector<int>, double> exact_partition_posterior(const std::vector<std::vector<double>>& x0,
                                                                    const std::vector<std::vector<double>>& x1,
                                                                    const std::vector<int>& routes, double gamma,
                                                                    double kappa, double a, double b) {
  const int n0 = static_cast<int>(x0.size());
  std::map<std::vector<int>, double> log_p;
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& rgs : set_partitions(n0)) {
    const int t = num_blocks(rgs);
    double lp = std::log(series_v(n0, t, gamma, kappa));
    for (int c = 0; c < t; ++c) {
      std::vector<std::vector<double>> members;
      for (int i = 0; i < n0; ++i)
        if (rgs[i] == c) members.push_back(x0[i]);
      lp += std::lgamma(gamma + members.size()) - std::lgamma(gamma);
      for (std::size_t j = 0; j < x1.size(); ++j)
        if (rgs[routes[j]] == c) members.push_back(x1[j]);
      lp += predictive_log_marginal(members, a, b);
    }
    log_p[rgs] = lp;
    hi = std::max(hi, lp);
  }
  double z = 0.0;
  for (auto& [key, lp] : log_p) z += std::exp(lp - hi);
  std::map<std::vector<int>, double> p;
  for (auto& [key, lp] : log_p) p[key] = std::exp(lp - hi) / z;
  return p;
}

/// Total variation distance between an empirical histogram and a distribution.
inline double total_variation(const std::map<std::vector<int>, long>& counts, const std::map<std::vector<int>, double>& p) {
  long total = 0;
  for (const auto& [key, c] : counts) total += c;
  double tv = 0.0;
  for (const auto& [key, prob] : p) {
    const auto it = counts.find(key);
    const double freq = it == counts.end() ? 0.0 : static_cast<double>(it->second) / total;
    tv += std::abs(freq - prob);
  }
  for (const auto& [key, c] : counts)
    if (!p.count(key)) tv += static_cast<double>(c) / total;
  return 0.5 * tv;
}

}  // namespace oracle
