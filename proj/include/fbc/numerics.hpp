// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace fbc {

using Rng = std::mt19937_64;

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// Stable log-sum-exp over any dense Eigen expression.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar hi = x.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((x.derived().array() - hi).exp().sum());
}

inline double log_sum_exp(std::span<const double> x) {
  return log_sum_exp(Eigen::Map<const Eigen::ArrayXd>(x.data(), static_cast<Eigen::Index>(x.size())));
}

/// log of the rising factorial x^(n) = Gamma(x + n) / Gamma(x).
inline double log_rising_factorial(double x, double n) {
  return std::lgamma(x + n) - std::lgamma(x);
}

/// Draws an index with probability proportional to exp(log_weights[k]).
/// Shift-invariant in the weights.
template <typename Derived>
Eigen::Index sample_log_categorical(const Eigen::DenseBase<Derived>& log_weights, Rng& rng) {
  const double hi = log_weights.maxCoeff();
  const Eigen::ArrayXd w = (log_weights.derived().array() - hi).exp();
  const double total = w.sum();
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    u -= w[k];
    if (u < 0.0) return k;
  }
  // Rounding can leave u marginally nonnegative; fall back to the last positive weight.
  for (Eigen::Index k = w.size() - 1; k >= 0; --k)
    if (w[k] > 0.0) return k;
  return w.size() - 1;
}

/// Element-wise Neumaier compensated accumulator over Eigen arrays. The represented
/// value is `sum + comp`.
template <typename Scalar>
struct CompensatedArray {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Array sum;
  Array comp;

  CompensatedArray() = default;
  explicit CompensatedArray(Eigen::Index d) : sum(Array::Zero(d)), comp(Array::Zero(d)) {}

  template <typename Derived>
  void add(const Eigen::ArrayBase<Derived>& x) {
    for (Eigen::Index k = 0; k < sum.size(); ++k) {
      const Scalar v = x.coeff(k);
      const Scalar t = sum[k] + v;
      comp[k] += std::abs(sum[k]) >= std::abs(v) ? (sum[k] - t) + v : (v - t) + sum[k];
      sum[k] = t;
    }
  }

  void add(const CompensatedArray& other) {
    add(other.sum);
    comp += other.comp;
  }

  void subtract(const CompensatedArray& other) {
    add(-other.sum);
    comp -= other.comp;
  }

  Array value() const { return sum + comp; }
  Eigen::Index size() const { return sum.size(); }
};

/// splitmix64 finalizer; used for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of chain `index` derived from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ (index + 1) * 0xd1b54a32d192ed03ULL);
}

}  // namespace fbc
