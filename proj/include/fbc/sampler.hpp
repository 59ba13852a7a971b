// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "fbc/core.hpp"
#include "fbc/numerics.hpp"
#include "fbc/priors.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fbc {

enum class FamilyKind { normal_gamma, beta_bernoulli };
enum class ResidualStrategy { random, medoids };
/// collapsed: Neal's Algorithm 3 on m(X^c); auxiliary: Algorithm 8 with explicit phi_c.
enum class PartitionKernel { collapsed, auxiliary };

std::string to_string(FamilyKind kind);
std::string to_string(ResidualStrategy strategy);
std::string to_string(PartitionKernel kernel);
FamilyKind parse_family(const std::string& text);
ResidualStrategy parse_residual_strategy(const std::string& text);
PartitionKernel parse_partition_kernel(const std::string& text);

struct SamplerConfig {
  int max_iter = 1200;
  int burn_in = 1000;
  int mh_repeats = 10;
  /// |E_b| for each non-reference group in internal order; empty means all zero.
  std::vector<int> mask_sizes;
  ResidualStrategy residual_strategy = ResidualStrategy::random;
  int aux_components = 3;
  std::uint64_t seed = 1;
  FamilyKind family = FamilyKind::normal_gamma;
  PartitionKernel kernel = PartitionKernel::collapsed;
  bool fairness = true;
  bool random_scan = false;
  bool keep_matching = false;

  int mask_size(int group) const;
  void validate(const std::vector<int>& group_sizes) const;
};

/// One post-burn-in draw. `assignment` is canonical; `assignment.labels[0]` is the
/// group-0 view that gets serialized.
struct ChainSample {
  int iteration = 0;
  int num_clusters = 0;
  Assignment assignment;
  std::uint64_t matching_digest = 0;
  std::optional<MatchingState> matching;
  double delta = 0.0;
  double bal = 0.0;
  double cost = 0.0;
  double nll = 0.0;
};

struct TracePoint {
  int iteration = 0;
  int num_clusters = 0;
  double nll = 0.0;
};

struct ChainResult {
  std::uint64_t seed = 0;
  bool fairness = true;
  int reported = -1;  // uniformly drawn index into samples
  std::vector<ChainSample> samples;
  std::vector<TracePoint> trace;
};

/// PAM (greedy build plus best-improvement swaps) on squared Euclidean or Hamming distance.
std::vector<int> pam_medoids(const FeatureMatrix& points, FeatureKind kind, int k, int max_swap_rounds = 50);

/// R subset of [n0] with |R| = r, sorted.
std::vector<int> select_R(const FeatureMatrix& group0, FeatureKind kind, int r, ResidualStrategy strategy, Rng& rng);

/// Random member of T_R plus uniform T0 and a uniform m-subset E.
GroupMatching init_group_matching(int n0, int nb, std::vector<int> residual, int mask_size, Rng& rng);

struct TSwap {
  int i1 = 0;
  int i2 = 0;
};
struct T0Move {
  int position = 0;
  int target = 0;
};
struct MaskSwap {
  int leaving = -1;  // member of E moving out
  int entering = -1; // non-member moving in
  bool identity() const { return leaving < 0; }
};

/// Positions to swap; i1 == i2 only when n_b < 2 (identity).
TSwap draw_T_swap(int nb, Rng& rng);
T0Move draw_T0_move(int nb, int n0, Rng& rng);

std::vector<int> propose_T_swap(const std::vector<int>& T, Rng& rng);
std::vector<int> propose_T0(const std::vector<int>& T0, int n0, Rng& rng);
std::vector<char> propose_E(const std::vector<char>& in_mask, Rng& rng);

struct CoherenceReport {
  double max_stat_error = 0.0;
  double log_likelihood_error = 0.0;
  double log_energy_error = 0.0;
  bool routes_consistent = true;
  bool matching_valid = true;
  std::string message;
};

/// Latent state of one chain: a partition of [n0] with cached per-cluster statistics over
/// every routed instance, the matching variables and the matched-distance cache.
template <class Family>
class ChainState {
 public:
  using Stats = typename Family::Stats;
  using Params = typename Family::Params;

  struct Cluster {
    int size0 = 0;
    Stats stats;
    double log_marginal = 0.0;
    Params phi;  // auxiliary kernel only
  };

  /// `groups[0]` is the reference group; `matching` holds one entry per further group.
  ChainState(std::vector<FeatureMatrix> groups, FeatureKind kind, Family family, PriorConfig prior,
             MatchingState matching, PartitionKernel kernel, Rng& rng);

  int n0() const { return static_cast<int>(groups_[0].rows()); }
  int num_groups() const { return static_cast<int>(groups_.size()); }
  int num_clusters() const { return static_cast<int>(active_.size()); }
  const Family& family() const { return family_; }
  const PriorConfig& prior() const { return prior_; }
  const MatchingState& matching() const { return matching_; }
  const std::vector<FeatureMatrix>& groups() const { return groups_; }
  PartitionKernel kernel() const { return kernel_; }

  Partition partition() const;
  Assignment assignment() const { return assignments_from(partition(), matching_); }
  /// Group-0 index of every instance of group b >= 1.
  std::vector<int> routes(int group) const;

  /// Collapsed kernel: sum_c log m(X^c). Auxiliary kernel: sum_x log f(x | phi_c(x)).
  double log_likelihood() const;
  /// sum_c log m(X^c) regardless of kernel.
  double log_marginal_total() const;
  double log_energy() const;

  /// Replaces the partition (statistics rebuilt). Used for initialization and tests.
  void set_partition(const Partition& partition, Rng& rng);

  /// One joint (T', T0', E') Metropolis-Hastings proposal for group b >= 1.
  bool mh_step(int group, Rng& rng);
  /// Sequential (or random-scan) Gibbs sweep over [n0] with matched blocks.
  void gibbs_collapsed(const VCoefficients& v, bool random_scan, Rng& rng);
  void gibbs_auxiliary(const VCoefficients& v, int aux_components, bool random_scan, Rng& rng);

  /// Compares every cache against a from-scratch rebuild.
  CoherenceReport check_coherence() const;

  // Acceptance bookkeeping.
  long proposals() const { return proposals_; }
  long accepts() const { return accepts_; }

 private:
  auto row(int group, int index) const { return groups_[group].row(index); }
  double matched_distance(int group, int j, int target) const;
  int new_slot();
  void release_slot(int slot);
  void build_routing();
  void load_block(int i);
  template <typename Fn>
  void for_block(int i, Fn&& fn) const;
  std::vector<int> sweep_order(bool random_scan, Rng& rng) const;
  double log_v_ratio(const VCoefficients& v, int t) const;

  std::vector<FeatureMatrix> groups_;
  FeatureKind kind_;
  Family family_;
  PriorConfig prior_;
  MatchingState matching_;
  PartitionKernel kernel_;

  std::vector<int> label0_;     // slot of every group-0 index
  std::vector<Cluster> slots_;
  std::vector<int> free_slots_;
  std::vector<int> active_;     // live slots
  std::vector<int> active_pos_; // slot -> position in active_, -1 if free

  // Per non-reference group: |E| members and non-members with positions for O(1) swaps.
  std::vector<std::vector<int>> mask_list_, unmask_list_, mask_pos_;
  // Per non-reference group: D(X0_T(j), Xb_j).
  std::vector<std::vector<double>> current_dist_;
  // Dense n0 x n_b distance tables when small enough, else empty.
  std::vector<Eigen::MatrixXd> dist_table_;

  // Inverse routing for the Gibbs sweep (CSR per non-reference group).
  std::vector<std::vector<int>> routed_offsets_, routed_items_;
  // Scratch buffers reused across steps.
  Stats block_;
  std::vector<Cluster> snapshot_;
  std::vector<int> snapshot_slot_;
  Eigen::ArrayXd weights_;
  Eigen::ArrayXd merged_;
  std::vector<Params> aux_;

  long proposals_ = 0;
  long accepts_ = 0;
};

/// mh_repeats rounds of one proposal per non-reference group.
template <class Family>
void mh_step_matching(ChainState<Family>& state, const SamplerConfig& config, Rng& rng) {
  for (int rep = 0; rep < config.mh_repeats; ++rep)
    for (int g = 1; g < state.num_groups(); ++g) state.mh_step(g, rng);
}

template <class Family>
void gibbs_partition_conjugate(ChainState<Family>& state, const VCoefficients& v, const SamplerConfig& config,
                               Rng& rng) {
  state.gibbs_collapsed(v, config.random_scan, rng);
}

template <class Family>
void gibbs_partition_nonconjugate(ChainState<Family>& state, const VCoefficients& v, const SamplerConfig& config,
                                  Rng& rng) {
  state.gibbs_auxiliary(v, config.aux_components, config.random_scan, rng);
}

/// Initial state: one cluster, T uniform over T_R, T0 i.i.d. uniform, E a uniform m-subset.
/// With fairness off all groups are pooled into group 0.
template <class Family>
ChainState<Family> init_state(const GroupedDataset& data, const PriorConfig& prior, const SamplerConfig& config,
                              Rng& rng);

/// log of sum_h (gamma/m) (V(t+1)/V(t)) prod_x f(x | phi_h) over fresh phi_h ~ H: the
/// Monte-Carlo estimate of the collapsed new-cluster weight.
template <class Family>
double auxiliary_new_cluster_log_weight(const Family& family, const FeatureMatrix& block, int aux_components,
                                        double gamma, double log_v_ratio, Rng& rng) {
  Eigen::ArrayXd w(aux_components);
  for (int h = 0; h < aux_components; ++h) {
    const auto phi = family.sample_prior(rng);
    double lw = std::log(gamma / aux_components) + log_v_ratio;
    for (Eigen::Index r = 0; r < block.rows(); ++r) lw += family.log_density(block.row(r), phi);
    w[h] = lw;
  }
  return log_sum_exp(w);
}

/// Runs the full chain: STEP 1 (matching MH) then STEP 2 (partition Gibbs) per iteration.
ChainResult run_fbc(const GroupedDataset& data, const PriorConfig& prior, const SamplerConfig& config);

extern template class ChainState<NormalGamma>;
extern template class ChainState<BetaBernoulli>;

}  // namespace fbc
