// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace fbc {

GroupedDataset::GroupedDataset(std::vector<FeatureMatrix> groups, FeatureKind kind,
                               std::vector<std::string> group_names)
    : kind_(kind) {
  if (groups.size() < 2) throw InvalidData("at least two sensitive groups are required");
  const auto d = groups[0].cols();
  for (std::size_t b = 0; b < groups.size(); ++b) {
    if (groups[b].rows() < 1) throw InvalidData("sensitive group " + std::to_string(b) + " is empty");
    if (groups[b].cols() != d) throw DimensionError("groups disagree on the number of features");
  }
  if (kind == FeatureKind::binary) {
    for (const auto& g : groups)
      if (((g.array() != 0.0) && (g.array() != 1.0)).any())
        throw InvalidData("binary features must be 0 or 1");
  }
  if (group_names.empty())
    for (std::size_t b = 0; b < groups.size(); ++b) group_names.push_back(std::to_string(b));
  if (group_names.size() != groups.size()) throw DimensionError("one name per group is required");

  relabel_map_.resize(groups.size());
  std::iota(relabel_map_.begin(), relabel_map_.end(), 0);
  std::stable_sort(relabel_map_.begin(), relabel_map_.end(),
                   [&](int a, int b) { return groups[a].rows() < groups[b].rows(); });
  for (int src : relabel_map_) {
    groups_.push_back(std::move(groups[src]));
    names_.push_back(group_names[src]);
  }
}

int GroupedDataset::total_size() const {
  int n = 0;
  for (const auto& g : groups_) n += static_cast<int>(g.rows());
  return n;
}

std::vector<int> GroupedDataset::group_sizes() const {
  std::vector<int> sizes;
  for (const auto& g : groups_) sizes.push_back(static_cast<int>(g.rows()));
  return sizes;
}

FeatureMatrix GroupedDataset::pooled() const {
  FeatureMatrix out(total_size(), dim());
  Eigen::Index row = 0;
  for (const auto& g : groups_) {
    out.middleRows(row, g.rows()) = g;
    row += g.rows();
  }
  return out;
}

std::vector<int> Assignment::group_sizes() const {
  std::vector<int> sizes;
  for (const auto& l : labels) sizes.push_back(static_cast<int>(l.size()));
  return sizes;
}

Assignment canonicalize(const Assignment& assignment) {
  std::unordered_map<int, int> relabel;
  Assignment out;
  out.labels.reserve(assignment.labels.size());
  for (const auto& group : assignment.labels) {
    std::vector<int> mapped(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto [it, inserted] = relabel.try_emplace(group[i], static_cast<int>(relabel.size()) + 1);
      mapped[i] = it->second;
    }
    out.labels.push_back(std::move(mapped));
  }
  out.num_clusters = static_cast<int>(relabel.size());
  return out;
}

Partition::Partition(const std::vector<int>& labels) {
  std::unordered_map<int, int> relabel;
  labels_.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = relabel.try_emplace(labels[i], static_cast<int>(relabel.size()));
    if (inserted) block_sizes_.push_back(0);
    labels_[i] = it->second;
    ++block_sizes_[it->second];
  }
}

Partition Partition::single_cluster(int n) { return Partition(std::vector<int>(n, 0)); }

Partition Partition::from_blocks(const std::vector<std::vector<int>>& blocks, int n) {
  std::vector<int> labels(n, -1);
  for (std::size_t k = 0; k < blocks.size(); ++k)
    for (int i : blocks[k]) {
      if (i < 0 || i >= n || labels[i] != -1) throw InvalidData("blocks must partition [n]");
      labels[i] = static_cast<int>(k);
    }
  if (std::find(labels.begin(), labels.end(), -1) != labels.end())
    throw InvalidData("blocks must cover [n]");
  return Partition(labels);
}

std::vector<std::vector<int>> Partition::blocks() const {
  std::vector<std::vector<int>> out(block_sizes_.size());
  for (int i = 0; i < size(); ++i) out[labels_[i]].push_back(i);
  return out;
}

std::vector<int> GroupMatching::mask_members() const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j)
    if (in_mask[j]) out.push_back(j);
  return out;
}

MatchingReport validate_matching(const GroupMatching& m, int n0, int nb) {
  auto fail = [](MatchingViolation v, std::string msg) { return MatchingReport{v, std::move(msg)}; };
  if (m.size() != nb || static_cast<int>(m.T0.size()) != nb || static_cast<int>(m.in_mask.size()) != nb)
    return fail(MatchingViolation::size_mismatch, "map lengths differ from n_b");
  const int beta = nb / n0;
  const int r = nb % n0;
  if (m.beta != beta || m.r != r)
    return fail(MatchingViolation::size_mismatch, "beta/r inconsistent with n_b = beta*n0 + r");
  std::vector<int> preimage(n0, 0);
  for (int j = 0; j < nb; ++j) {
    if (m.T[j] < 0 || m.T[j] >= n0 || m.T0[j] < 0 || m.T0[j] >= n0)
      return fail(MatchingViolation::out_of_range, "map value outside [n0] at position " + std::to_string(j));
    ++preimage[m.T[j]];
  }
  for (int i = 0; i < n0; ++i)
    if (preimage[i] == 0) return fail(MatchingViolation::not_onto, "not onto: " + std::to_string(i) + " has no preimage");
  std::vector<int> residual;
  for (int i = 0; i < n0; ++i) {
    if (preimage[i] != beta && preimage[i] != beta + 1)
      return fail(MatchingViolation::preimage_size,
                  "preimage of " + std::to_string(i) + " has size " + std::to_string(preimage[i]));
    if (preimage[i] == beta + 1) residual.push_back(i);
  }
  std::vector<int> expected = m.residual;
  std::sort(expected.begin(), expected.end());
  if (residual != expected || static_cast<int>(residual.size()) != r)
    return fail(MatchingViolation::residual_mismatch, "R_T differs from R");
  const auto masked = static_cast<int>(std::count(m.in_mask.begin(), m.in_mask.end(), 1));
  if (masked != m.mask_size || m.mask_size < 0 || m.mask_size > nb)
    return fail(MatchingViolation::mask_size, "|E| = " + std::to_string(masked) + " but m = " + std::to_string(m.mask_size));
  return {};
}

MatchingReport validate_matching(const MatchingState& matching, const std::vector<int>& group_sizes) {
  if (matching.groups.size() + 1 != group_sizes.size())
    return {MatchingViolation::size_mismatch, "one matching per non-reference group is required"};
  for (std::size_t b = 1; b < group_sizes.size(); ++b) {
    auto report = validate_matching(matching.groups[b - 1], group_sizes[0], group_sizes[b]);
    if (!report) {
      report.message = "group " + std::to_string(b) + ": " + report.message;
      return report;
    }
  }
  return {};
}

namespace {

// counts[k][b] for labels in 1..K.
std::vector<std::vector<int>> cluster_counts(const std::vector<int>& group_sizes, const Assignment& a) {
  if (a.labels.size() != group_sizes.size() || a.labels.size() < 2)
    throw DimensionError("assignment must cover every group (at least two)");
  for (std::size_t b = 0; b < group_sizes.size(); ++b)
    if (static_cast<int>(a.labels[b].size()) != group_sizes[b])
      throw DimensionError("assignment length differs from group size for group " + std::to_string(b));
  std::vector<std::vector<int>> counts(a.num_clusters, std::vector<int>(group_sizes.size(), 0));
  for (std::size_t b = 0; b < a.labels.size(); ++b)
    for (int label : a.labels[b]) {
      if (label < 1 || label > a.num_clusters) throw DimensionError("label outside [K]");
      ++counts[label - 1][b];
    }
  return counts;
}

}  // namespace

double delta_fairness(const std::vector<int>& group_sizes, const Assignment& assignment) {
  const auto counts = cluster_counts(group_sizes, assignment);
  const auto groups = group_sizes.size();
  double total = 0.0;
  for (const auto& row : counts) {
    const double p0 = static_cast<double>(row[0]) / group_sizes[0];
    for (std::size_t b = 1; b < groups; ++b) total += std::abs(p0 - static_cast<double>(row[b]) / group_sizes[b]);
  }
  return total / (2.0 * static_cast<double>(groups - 1));
}

double balance(const std::vector<int>& group_sizes, const Assignment& assignment) {
  const auto counts = cluster_counts(group_sizes, assignment);
  double bal = 1.0;
  for (const auto& row : counts) {
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    if (*hi == 0) continue;  // unused label
    bal = std::min(bal, static_cast<double>(*lo) / *hi);
  }
  return bal;
}

Assignment assignments_from(const Partition& partition, const MatchingState& matching) {
  Assignment raw;
  raw.labels.push_back(partition.labels());
  for (const auto& m : matching.groups) {
    std::vector<int> labels(m.size());
    for (int j = 0; j < m.size(); ++j) labels[j] = partition.labels()[m.route(j)];
    raw.labels.push_back(std::move(labels));
  }
  return canonicalize(raw);
}

std::uint64_t matching_digest(const MatchingState& matching) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (v >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& m : matching.groups) {
    mix(static_cast<std::uint64_t>(m.size()));
    for (int v : m.T) mix(static_cast<std::uint64_t>(v));
    for (int v : m.T0) mix(static_cast<std::uint64_t>(v));
    for (char v : m.in_mask) mix(static_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace fbc
