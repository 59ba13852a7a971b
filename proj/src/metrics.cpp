// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace fbc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_assignment(const GroupedDataset& data, const Assignment& assignment) {
  if (static_cast<int>(assignment.labels.size()) != data.num_groups())
    throw DimensionError("assignment must have one label vector per group");
  for (int b = 0; b < data.num_groups(); ++b) {
    if (static_cast<int>(assignment.labels[b].size()) != data.size(b))
      throw DimensionError("assignment length differs from group size");
    for (int label : assignment.labels[b])
      if (label < 1 || label > assignment.num_clusters) throw DimensionError("label outside [K]");
  }
}

}  // namespace

double cost(const GroupedDataset& data, const Assignment& assignment) {
  check_assignment(data, assignment);
  const int k_count = assignment.num_clusters;
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(k_count, data.dim());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k_count);
  for (int b = 0; b < data.num_groups(); ++b)
    for (int j = 0; j < data.size(b); ++j) {
      const int k = assignment.labels[b][j] - 1;
      centers.row(k) += data.group(b).row(j);
      counts[k] += 1.0;
    }
  for (int k = 0; k < k_count; ++k)
    if (counts[k] > 0) centers.row(k) /= counts[k];
  double total = 0.0;
  for (int b = 0; b < data.num_groups(); ++b)
    for (int j = 0; j < data.size(b); ++j)
      total += (data.group(b).row(j) - centers.row(assignment.labels[b][j] - 1)).squaredNorm();
  return total / data.total_size();
}

double categorical_cost(const GroupedDataset& data, const Assignment& assignment, double alpha) {
  if (data.kind() != FeatureKind::binary) throw InvalidData("categorical cost requires binary features");
  if (alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
  check_assignment(data, assignment);
  const int k_count = assignment.num_clusters;
  Eigen::MatrixXd ones = Eigen::MatrixXd::Zero(k_count, data.dim());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k_count);
  for (int b = 0; b < data.num_groups(); ++b)
    for (int j = 0; j < data.size(b); ++j) {
      const int k = assignment.labels[b][j] - 1;
      ones.row(k) += data.group(b).row(j);
      counts[k] += 1.0;
    }
  double nll = 0.0;
  for (int k = 0; k < k_count; ++k) {
    if (counts[k] == 0) continue;
    for (int d = 0; d < data.dim(); ++d) {
      const double n1 = ones(k, d);
      const double n0 = counts[k] - n1;
      const double p = (n1 + alpha) / (counts[k] + 2.0 * alpha);
      if (n1 > 0) nll -= n1 * std::log(p);
      if (n0 > 0) nll -= n0 * std::log1p(-p);
    }
  }
  return nll;
}

std::vector<double> autocorrelation(std::span<const double> series, int h_max) {
  const auto n = static_cast<int>(series.size());
  if (h_max < 0) throw std::invalid_argument("h_max must be nonnegative");
  if (n <= h_max + 1) throw std::invalid_argument("series must be longer than h_max + 1");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
  double var = 0.0;
  for (double x : series) var += (x - mean) * (x - mean);
  var /= n;
  std::vector<double> rho(h_max + 1, 0.0);
  rho[0] = 1.0;
  if (var <= 0.0) return rho;
  for (int h = 1; h <= h_max; ++h) {
    double acc = 0.0;
    for (int t = 0; t + h < n; ++t) acc += (series[t] - mean) * (series[t + h] - mean);
    rho[h] = acc / (n - h) / var;
  }
  return rho;
}

AssignmentSolution hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("hungarian: need rows <= cols");
  // Shortest augmenting paths with potentials; index 0 is a sentinel column.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  AssignmentSolution out;
  out.row_to_col.assign(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out.row_to_col[p[j] - 1] = j - 1;
  out.row_potential = Eigen::Map<Eigen::VectorXd>(u.data() + 1, n);
  out.col_potential = Eigen::Map<Eigen::VectorXd>(v.data() + 1, m);
  for (int i = 0; i < n; ++i) out.total_cost += cost(i, out.row_to_col[i]);
  return out;
}

AssignmentSolution auction_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("auction: need rows <= cols");
  AssignmentSolution out;
  out.exact = false;
  out.row_to_col.assign(n, -1);
  if (n == 0) return out;
  const double range = std::max(cost.maxCoeff() - cost.minCoeff(), 1e-12);
  const double eps_final = range / (1e6 * n);
  Eigen::VectorXd price = Eigen::VectorXd::Zero(m);
  std::vector<int> owner(m, -1);
  for (double eps = range / 4.0;; eps = std::max(eps / 5.0, eps_final)) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(out.row_to_col.begin(), out.row_to_col.end(), -1);
    std::deque<int> queue(n);
    std::iota(queue.begin(), queue.end(), 0);
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      double best = kInf, second = kInf;
      int best_j = 0;
      for (int j = 0; j < m; ++j) {
        const double value = cost(i, j) + price[j];
        if (value < best) {
          second = best;
          best = value;
          best_j = j;
        } else if (value < second) {
          second = value;
        }
      }
      price[best_j] += (m > 1 ? second - best : 0.0) + eps;
      if (owner[best_j] >= 0) {
        out.row_to_col[owner[best_j]] = -1;
        queue.push_back(owner[best_j]);
      }
      owner[best_j] = i;
      out.row_to_col[i] = best_j;
    }
    if (eps <= eps_final) break;
  }
  out.col_potential = -price;
  out.row_potential.resize(n);
  for (int i = 0; i < n; ++i) {
    out.row_potential[i] = (cost.row(i).transpose() + price).minCoeff();
    out.total_cost += cost(i, out.row_to_col[i]);
  }
  return out;
}

AssignmentSolution solve_assignment(const Eigen::MatrixXd& cost, int exact_limit) {
  if (cost.rows() <= exact_limit) return hungarian(cost);
  return auction_assignment(cost);
}

Eigen::MatrixXd squared_distance_matrix(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("feature dimensions differ");
  const Eigen::VectorXd an = a.rowwise().squaredNorm();
  const Eigen::RowVectorXd bn = b.rowwise().squaredNorm().transpose();
  Eigen::MatrixXd d = (-2.0 * a * b.transpose()).colwise() + an;
  d.rowwise() += bn;
  return d.cwiseMax(0.0);
}

TestLabels propagate_test_labels(const FeatureMatrix& train0, const std::vector<int>& train_labels0,
                                 const FeatureMatrix& test0, const FeatureMatrix& test1) {
  if (test0.rows() != test1.rows()) throw std::invalid_argument("test groups must have equal size");
  if (test0.rows() > train0.rows()) throw std::invalid_argument("test group larger than training group 0");
  if (static_cast<Eigen::Index>(train_labels0.size()) != train0.rows())
    throw DimensionError("one label per training group-0 instance is required");
  const auto to_train = solve_assignment(squared_distance_matrix(test0, train0));
  const auto to_test0 = solve_assignment(squared_distance_matrix(test1, test0));
  TestLabels out;
  out.exact = to_train.exact && to_test0.exact;
  out.group0.resize(test0.rows());
  out.group1.resize(test1.rows());
  for (Eigen::Index j = 0; j < test0.rows(); ++j) out.group0[j] = train_labels0[to_train.row_to_col[j]];
  for (Eigen::Index j = 0; j < test1.rows(); ++j) out.group1[j] = out.group0[to_test0.row_to_col[j]];
  return out;
}

int posterior_mode_k(const std::vector<ChainSample>& samples) {
  std::map<int, int> hist;
  for (const auto& s : samples) ++hist[s.num_clusters];
  int mode = 0, best = 0;
  for (const auto& [k, count] : hist)
    if (count > best) {
      best = count;
      mode = k;
    }
  return mode;
}

ChainSummary summarize_chain(const std::vector<ChainSample>& samples, const std::vector<TracePoint>& trace,
                             int h_max) {
  ChainSummary out;
  out.nll_trace = trace;
  if (samples.empty()) return out;
  std::vector<double> ks;
  for (const auto& s : samples) {
    ++out.k_histogram[s.num_clusters];
    ks.push_back(s.num_clusters);
    out.mean_cost += s.cost;
    out.mean_delta += s.delta;
    out.mean_bal += s.bal;
    out.max_delta = std::max(out.max_delta, s.delta);
  }
  const double count = static_cast<double>(samples.size());
  out.mean_cost /= count;
  out.mean_delta /= count;
  out.mean_bal /= count;
  out.mode_k = posterior_mode_k(samples);
  const int usable = std::min(h_max, static_cast<int>(ks.size()) - 2);
  out.k_autocorrelation = usable >= 0 ? autocorrelation(ks, usable) : std::vector<double>{1.0};
  return out;
}

}  // namespace fbc
