// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbc {

/// Row-major so each instance is a contiguous row.
template <typename Scalar>
using FeatureMatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureMatrix = FeatureMatrixT<double>;

enum class FeatureKind { continuous, binary };

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidData : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Instances split by sensitive group. Internally the groups are ordered so that
/// group 0 is the smallest; `relabel_map[b]` is the caller's index of internal group b.
class GroupedDataset {
 public:
  GroupedDataset() = default;

  /// Takes groups in caller order and reorders them by ascending size (stable).
  GroupedDataset(std::vector<FeatureMatrix> groups, FeatureKind kind,
                 std::vector<std::string> group_names = {});

  int num_groups() const { return static_cast<int>(groups_.size()); }
  int dim() const { return groups_.empty() ? 0 : static_cast<int>(groups_[0].cols()); }
  int size(int b) const { return static_cast<int>(groups_[b].rows()); }
  int total_size() const;
  std::vector<int> group_sizes() const;
  FeatureKind kind() const { return kind_; }

  const FeatureMatrix& group(int b) const { return groups_[b]; }
  const std::vector<FeatureMatrix>& groups() const { return groups_; }
  const std::vector<int>& relabel_map() const { return relabel_map_; }
  const std::vector<std::string>& group_names() const { return names_; }

  /// All instances stacked in internal group order.
  FeatureMatrix pooled() const;

 private:
  std::vector<FeatureMatrix> groups_;
  FeatureKind kind_ = FeatureKind::continuous;
  std::vector<int> relabel_map_;
  std::vector<std::string> names_;
};

/// Per-group cluster labels in 1..K.
struct Assignment {
  std::vector<std::vector<int>> labels;
  int num_clusters = 0;

  std::vector<int> group_sizes() const;
};

/// Relabels clusters by first appearance scanning group 0, then group 1, and so on.
Assignment canonicalize(const Assignment& assignment);

/// A set partition of [n0] stored as 0-based block labels in first-appearance order.
class Partition {
 public:
  Partition() = default;
  /// Any integer labels; they are canonicalized.
  explicit Partition(const std::vector<int>& labels);
  static Partition single_cluster(int n);
  static Partition from_blocks(const std::vector<std::vector<int>>& blocks, int n);

  int size() const { return static_cast<int>(labels_.size()); }
  int num_clusters() const { return static_cast<int>(block_sizes_.size()); }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& block_sizes() const { return block_sizes_; }
  std::vector<std::vector<int>> blocks() const;

  bool operator==(const Partition&) const = default;

 private:
  std::vector<int> labels_;
  std::vector<int> block_sizes_;
};

/// Fairness latent variables linking one non-reference group b to group 0.
/// Indices are 0-based: T, T0 map [n_b] -> [n0].
struct GroupMatching {
  std::vector<int> T;
  std::vector<int> T0;
  std::vector<char> in_mask;  // membership of E
  std::vector<int> residual;  // R, sorted
  int beta = 1;
  int r = 0;
  int mask_size = 0;

  int size() const { return static_cast<int>(T.size()); }
  /// Group-0 index instance j is routed to.
  int route(int j) const { return in_mask[j] ? T0[j] : T[j]; }
  std::vector<int> mask_members() const;
};

/// One GroupMatching per non-reference group (index b-1 for group b).
struct MatchingState {
  std::vector<GroupMatching> groups;
};

enum class MatchingViolation {
  size_mismatch,
  out_of_range,
  not_onto,
  preimage_size,
  residual_mismatch,
  mask_size,
};

struct MatchingReport {
  std::optional<MatchingViolation> violation;
  std::string message;

  bool ok() const { return !violation.has_value(); }
  explicit operator bool() const { return ok(); }
};

/// Checks onto-ness, preimage sizes in {beta, beta+1}, R_T = R and |E| = m.
MatchingReport validate_matching(const GroupMatching& matching, int n0, int nb);
MatchingReport validate_matching(const MatchingState& matching, const std::vector<int>& group_sizes);

/// Group fairness gap, averaged over the non-reference groups; 0 is perfectly fair.
double delta_fairness(const std::vector<int>& group_sizes, const Assignment& assignment);

/// Minimum over clusters of min_b count / max_b count. A cluster missing a group scores 0.
double balance(const std::vector<int>& group_sizes, const Assignment& assignment);

/// Group-0 labels come from the partition; group b follows T_b outside E_b and T0_b inside.
Assignment assignments_from(const Partition& partition, const MatchingState& matching);

/// Euclidean distance for continuous features, Hamming distance for binary ones.
template <typename DerivedA, typename DerivedB>
double feature_distance(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& y,
                        FeatureKind kind) {
  if (kind == FeatureKind::binary) return static_cast<double>((x.array() != y.array()).count());
  return (x - y).norm();
}

/// 64-bit FNV-1a digest of (T, T0, E) over all groups.
std::uint64_t matching_digest(const MatchingState& matching);

}  // namespace fbc
