// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "fbc/core.hpp"
#include "fbc/sampler.hpp"

#include <Eigen/Dense>

#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace fbc {

/// Pooled within-cluster squared distance to the empirical centers, divided by total n.
double cost(const GroupedDataset& data, const Assignment& assignment);

/// Sum over clusters of the Bernoulli NLL at posterior-mean parameters
/// (ones + alpha) / (n + 2 alpha). alpha = 0 gives the MLE, with 0 log 0 = 0.
double categorical_cost(const GroupedDataset& data, const Assignment& assignment, double alpha);

/// Sample autocorrelation with overall-mean centering:
/// rho(h) = [sum_t (x_t - m)(x_{t+h} - m) / (n - h)] / [sum_t (x_t - m)^2 / n].
/// A constant series gives 1, 0, 0, ...
std::vector<double> autocorrelation(std::span<const double> series, int h_max);

struct AssignmentSolution {
  std::vector<int> row_to_col;
  double total_cost = 0.0;
  Eigen::VectorXd row_potential;  // u_i + v_j <= c_ij, equality on matched pairs
  Eigen::VectorXd col_potential;
  bool exact = true;
};

/// Minimum-cost injective assignment of rows into columns (rows <= cols), O(n^2 m).
AssignmentSolution hungarian(const Eigen::MatrixXd& cost);

/// Forward auction with epsilon scaling. Within n * epsilon_final of optimal.
AssignmentSolution auction_assignment(const Eigen::MatrixXd& cost);

/// Hungarian up to `exact_limit` rows, auction beyond (flagged `exact = false`).
AssignmentSolution solve_assignment(const Eigen::MatrixXd& cost, int exact_limit = 512);

/// Squared Euclidean cost between the rows of `a` and the rows of `b`.
Eigen::MatrixXd squared_distance_matrix(const FeatureMatrix& a, const FeatureMatrix& b);

struct TestLabels {
  std::vector<int> group0;
  std::vector<int> group1;
  bool exact = true;
};

/// Propagates training group-0 labels to a test pair of equal size: each test group-0 point
/// takes the label of its partner under an injective assignment into training group 0, and
/// each test group-1 point takes the label of its partner in test group 0.
TestLabels propagate_test_labels(const FeatureMatrix& train0, const std::vector<int>& train_labels0,
                                 const FeatureMatrix& test0, const FeatureMatrix& test1);

/// Negative log predictive density of the test points given their propagated labels:
/// -sum_k [log m(train_k + test_k) - log m(train_k)].
template <class Family>
double test_nll(const Family& family, const GroupedDataset& train, const Assignment& train_assignment,
                const FeatureMatrix& test0, const FeatureMatrix& test1) {
  const auto labels = propagate_test_labels(train.group(0), train_assignment.labels[0], test0, test1);
  const int k_count = train_assignment.num_clusters;
  std::vector<typename Family::Stats> base(k_count, family.empty());
  for (int b = 0; b < train.num_groups(); ++b)
    for (int j = 0; j < train.size(b); ++j) family.add(base[train_assignment.labels[b][j] - 1], train.group(b).row(j));
  std::vector<typename Family::Stats> test(k_count, family.empty());
  for (Eigen::Index j = 0; j < test0.rows(); ++j) family.add(test[labels.group0[j] - 1], test0.row(j));
  for (Eigen::Index j = 0; j < test1.rows(); ++j) family.add(test[labels.group1[j] - 1], test1.row(j));
  double nll = 0.0;
  for (int k = 0; k < k_count; ++k)
    if (test[k].n > 0) nll -= family.log_marginal_merged(base[k], test[k]) - family.log_marginal(base[k]);
  return nll;
}

struct ChainSummary {
  std::map<int, int> k_histogram;
  int mode_k = 0;
  std::vector<double> k_autocorrelation;
  std::vector<TracePoint> nll_trace;
  double mean_cost = 0.0;
  double mean_delta = 0.0;
  double mean_bal = 0.0;
  double max_delta = 0.0;
};

/// Posterior mode of K; ties go to the smaller K. Zero for an empty sample list.
int posterior_mode_k(const std::vector<ChainSample>& samples);

/// h_max is clamped so the series stays longer than h_max + 1.
ChainSummary summarize_chain(const std::vector<ChainSample>& samples, const std::vector<TracePoint>& trace,
                             int h_max);

}  // namespace fbc
