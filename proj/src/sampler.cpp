// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/sampler.hpp"

#include "fbc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fbc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Dense distance tables up to this many entries.
constexpr long kMaxTableEntries = 10'000'000;
// Largest number of clusters the partition prior table covers.
constexpr int kMaxClusters = 512;

int uniform_index(int n, Rng& rng) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

}  // namespace

std::string to_string(FamilyKind kind) {
  return kind == FamilyKind::normal_gamma ? "normal-gamma" : "beta-bernoulli";
}
std::string to_string(ResidualStrategy strategy) {
  return strategy == ResidualStrategy::random ? "random" : "medoids";
}
std::string to_string(PartitionKernel kernel) {
  return kernel == PartitionKernel::collapsed ? "collapsed" : "auxiliary";
}

FamilyKind parse_family(const std::string& text) {
  if (text == "normal-gamma") return FamilyKind::normal_gamma;
  if (text == "beta-bernoulli") return FamilyKind::beta_bernoulli;
  throw std::invalid_argument("unknown family '" + text + "' (normal-gamma | beta-bernoulli)");
}
ResidualStrategy parse_residual_strategy(const std::string& text) {
  if (text == "random") return ResidualStrategy::random;
  if (text == "medoids") return ResidualStrategy::medoids;
  throw std::invalid_argument("unknown R strategy '" + text + "' (random | medoids)");
}
PartitionKernel parse_partition_kernel(const std::string& text) {
  if (text == "collapsed") return PartitionKernel::collapsed;
  if (text == "auxiliary") return PartitionKernel::auxiliary;
  throw std::invalid_argument("unknown kernel '" + text + "' (collapsed | auxiliary)");
}

int SamplerConfig::mask_size(int group) const {
  if (mask_sizes.empty()) return 0;
  if (mask_sizes.size() == 1) return mask_sizes[0];
  return mask_sizes.at(group - 1);
}

void SamplerConfig::validate(const std::vector<int>& group_sizes) const {
  if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
  if (burn_in < 0 || burn_in >= max_iter) throw std::invalid_argument("need 0 <= burn_in < max_iter");
  if (mh_repeats < 0) throw std::invalid_argument("mh_repeats must be nonnegative");
  if (aux_components < 1) throw std::invalid_argument("aux_components must be at least 1");
  const auto groups = group_sizes.size();
  if (mask_sizes.size() > 1 && mask_sizes.size() + 1 != groups)
    throw std::invalid_argument("mask_sizes needs one entry per non-reference group (or a single shared value)");
  for (std::size_t b = 1; b < groups; ++b) {
    const int m = mask_size(static_cast<int>(b));
    if (m < 0 || m > group_sizes[b])
      throw std::invalid_argument("mask size " + std::to_string(m) + " outside [0, n_" + std::to_string(b) + "]");
  }
}

// ---------------------------------------------------------------------------------------
// Residual selection

std::vector<int> pam_medoids(const FeatureMatrix& points, FeatureKind kind, int k, int max_swap_rounds) {
  const int n = static_cast<int>(points.rows());
  if (k < 0 || k > n) throw std::invalid_argument("pam_medoids: need 0 <= k <= n");
  if (k == 0) return {};
  auto dist = [&](int i, int j) {
    if (kind == FeatureKind::binary) return static_cast<double>((points.row(i).array() != points.row(j).array()).count());
    return (points.row(i) - points.row(j)).squaredNorm();
  };
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) d(i, j) = d(j, i) = dist(i, j);

  std::vector<int> medoids;
  std::vector<char> is_medoid(n, 0);
  Eigen::VectorXd nearest = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  // Greedy build: each step adds the point with the largest drop in total distance.
  for (int step = 0; step < k; ++step) {
    int best = -1;
    double best_total = std::numeric_limits<double>::infinity();
    for (int c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      const double total = nearest.cwiseMin(d.col(c)).sum();
      if (total < best_total) {
        best_total = total;
        best = c;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = 1;
    nearest = nearest.cwiseMin(d.col(best));
  }

  // Swap phase with shared removal losses: one O(n^2) pass evaluates every (medoid, candidate) pair.
  std::vector<int> near_idx(n);
  Eigen::VectorXd near_d(n), second_d(n), delta(k);
  for (int round = 0; round < max_swap_rounds; ++round) {
    for (int j = 0; j < n; ++j) {
      double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
      int i1 = 0;
      for (int m = 0; m < k; ++m) {
        const double v = d(medoids[m], j);
        if (v < d1) {
          d2 = d1;
          d1 = v;
          i1 = m;
        } else if (v < d2) {
          d2 = v;
        }
      }
      near_idx[j] = i1;
      near_d[j] = d1;
      second_d[j] = k > 1 ? d2 : d1;
    }
    Eigen::VectorXd removal = Eigen::VectorXd::Zero(k);
    for (int j = 0; j < n; ++j) removal[near_idx[j]] += second_d[j] - near_d[j];

    double best = -1e-12;
    int best_m = -1, best_c = -1;
    for (int c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      delta = removal;
      double shared = 0.0;
      for (int j = 0; j < n; ++j) {
        const double dcj = d(c, j);
        if (dcj < near_d[j]) {
          shared += dcj - near_d[j];
          delta[near_idx[j]] += near_d[j] - second_d[j];
        } else if (dcj < second_d[j]) {
          delta[near_idx[j]] += dcj - second_d[j];
        }
      }
      Eigen::Index m;
      const double value = delta.minCoeff(&m) + shared;
      if (value < best) {
        best = value;
        best_m = static_cast<int>(m);
        best_c = c;
      }
    }
    if (best_m < 0) break;
    is_medoid[medoids[best_m]] = 0;
    is_medoid[best_c] = 1;
    medoids[best_m] = best_c;
  }
  std::sort(medoids.begin(), medoids.end());
  return medoids;
}

std::vector<int> select_R(const FeatureMatrix& group0, FeatureKind kind, int r, ResidualStrategy strategy, Rng& rng) {
  const int n0 = static_cast<int>(group0.rows());
  if (r < 0 || r >= n0) throw std::invalid_argument("select_R: need 0 <= r < n0");
  if (r == 0) return {};
  if (strategy == ResidualStrategy::medoids) return pam_medoids(group0, kind, r);
  std::vector<int> all(n0);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(r);
  std::sort(all.begin(), all.end());
  return all;
}

GroupMatching init_group_matching(int n0, int nb, std::vector<int> residual, int mask_size, Rng& rng) {
  if (n0 < 1 || nb < n0) throw std::invalid_argument("init_group_matching: need 1 <= n0 <= n_b");
  if (mask_size < 0 || mask_size > nb) throw std::invalid_argument("init_group_matching: need 0 <= m <= n_b");
  GroupMatching m;
  m.beta = nb / n0;
  m.r = nb % n0;
  if (static_cast<int>(residual.size()) != m.r) throw std::invalid_argument("init_group_matching: |R| must equal r");
  std::sort(residual.begin(), residual.end());
  m.residual = std::move(residual);
  m.mask_size = mask_size;

  m.T.reserve(nb);
  for (int i = 0; i < n0; ++i) m.T.insert(m.T.end(), m.beta, i);
  m.T.insert(m.T.end(), m.residual.begin(), m.residual.end());
  std::shuffle(m.T.begin(), m.T.end(), rng);

  m.T0.resize(nb);
  for (auto& t : m.T0) t = uniform_index(n0, rng);

  std::vector<int> order(nb);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  m.in_mask.assign(nb, 0);
  for (int k = 0; k < mask_size; ++k) m.in_mask[order[k]] = 1;
  return m;
}

TSwap draw_T_swap(int nb, Rng& rng) {
  if (nb < 2) return {0, 0};
  const int i1 = uniform_index(nb, rng);
  int i2 = uniform_index(nb - 1, rng);
  if (i2 >= i1) ++i2;
  return {i1, i2};
}

T0Move draw_T0_move(int nb, int n0, Rng& rng) {
  const int position = uniform_index(nb, rng);
  return {position, uniform_index(n0, rng)};
}

std::vector<int> propose_T_swap(const std::vector<int>& T, Rng& rng) {
  auto out = T;
  const auto s = draw_T_swap(static_cast<int>(T.size()), rng);
  if (!T.empty()) std::swap(out[s.i1], out[s.i2]);
  return out;
}

std::vector<int> propose_T0(const std::vector<int>& T0, int n0, Rng& rng) {
  auto out = T0;
  if (T0.empty()) return out;
  const auto mv = draw_T0_move(static_cast<int>(T0.size()), n0, rng);
  out[mv.position] = mv.target;
  return out;
}

std::vector<char> propose_E(const std::vector<char>& in_mask, Rng& rng) {
  auto out = in_mask;
  std::vector<int> members, others;
  for (int j = 0; j < static_cast<int>(in_mask.size()); ++j) (in_mask[j] ? members : others).push_back(j);
  if (members.empty() || others.empty()) return out;
  out[members[uniform_index(static_cast<int>(members.size()), rng)]] = 0;
  out[others[uniform_index(static_cast<int>(others.size()), rng)]] = 1;
  return out;
}

// ---------------------------------------------------------------------------------------
// ChainState

template <class Family>
ChainState<Family>::ChainState(std::vector<FeatureMatrix> groups, FeatureKind kind, Family family, PriorConfig prior,
                               MatchingState matching, PartitionKernel kernel, Rng& rng)
    : groups_(std::move(groups)),
      kind_(kind),
      family_(std::move(family)),
      prior_(prior),
      matching_(std::move(matching)),
      kernel_(kernel) {
  if (groups_.empty() || groups_[0].rows() < 1) throw InvalidData("reference group must be non-empty");
  for (const auto& g : groups_)
    if (g.cols() != family_.dim()) throw DimensionError("feature dimension differs from the likelihood family");
  std::vector<int> sizes;
  for (const auto& g : groups_) sizes.push_back(static_cast<int>(g.rows()));
  if (groups_.size() > 1 || !matching_.groups.empty()) {
    const auto report = validate_matching(matching_, sizes);
    if (!report) throw std::invalid_argument("invalid matching: " + report.message);
  }

  const int groups_b = num_groups() - 1;
  mask_list_.resize(groups_b);
  unmask_list_.resize(groups_b);
  mask_pos_.resize(groups_b);
  current_dist_.resize(groups_b);
  dist_table_.resize(groups_b);
  routed_offsets_.resize(groups_b);
  routed_items_.resize(groups_b);
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    const int nb = m.size();
    auto& pos = mask_pos_[g - 1];
    pos.resize(nb);
    for (int j = 0; j < nb; ++j) {
      auto& list = m.in_mask[j] ? mask_list_[g - 1] : unmask_list_[g - 1];
      pos[j] = static_cast<int>(list.size());
      list.push_back(j);
    }
    if (static_cast<long>(n0()) * nb <= kMaxTableEntries) {
      auto& table = dist_table_[g - 1];
      table.resize(n0(), nb);
      for (int j = 0; j < nb; ++j)
        for (int i = 0; i < n0(); ++i) table(i, j) = feature_distance(row(0, i), row(g, j), kind_);
    }
    current_dist_[g - 1].resize(nb);
    for (int j = 0; j < nb; ++j) current_dist_[g - 1][j] = matched_distance(g, j, m.T[j]);
  }
  block_ = family_.empty();
  set_partition(Partition::single_cluster(n0()), rng);
}

template <class Family>
double ChainState<Family>::matched_distance(int group, int j, int target) const {
  const auto& table = dist_table_[group - 1];
  if (table.size() > 0) return table(target, j);
  return feature_distance(row(0, target), row(group, j), kind_);
}

template <class Family>
int ChainState<Family>::new_slot() {
  int slot;
  if (!free_slots_.empty()) {
    slot = free_slots_.back();
    free_slots_.pop_back();
  } else {
    slot = static_cast<int>(slots_.size());
    slots_.push_back(Cluster{0, family_.empty(), 0.0, {}});
    active_pos_.push_back(-1);
  }
  active_pos_[slot] = static_cast<int>(active_.size());
  active_.push_back(slot);
  return slot;
}

template <class Family>
void ChainState<Family>::release_slot(int slot) {
  const int pos = active_pos_[slot];
  const int last = active_.back();
  active_[pos] = last;
  active_pos_[last] = pos;
  active_.pop_back();
  active_pos_[slot] = -1;
  free_slots_.push_back(slot);
}

template <class Family>
Partition ChainState<Family>::partition() const {
  return Partition(label0_);
}

template <class Family>
std::vector<int> ChainState<Family>::routes(int group) const {
  const auto& m = matching_.groups.at(group - 1);
  std::vector<int> out(m.size());
  for (int j = 0; j < m.size(); ++j) out[j] = m.route(j);
  return out;
}

template <class Family>
void ChainState<Family>::set_partition(const Partition& partition, Rng& rng) {
  if (partition.size() != n0()) throw DimensionError("partition must cover the reference group");
  slots_.clear();
  free_slots_.clear();
  active_.clear();
  active_pos_.clear();
  label0_.assign(n0(), -1);
  for (int k = 0; k < partition.num_clusters(); ++k) new_slot();
  for (int i = 0; i < n0(); ++i) {
    const int slot = active_[partition.labels()[i]];
    label0_[i] = slot;
    ++slots_[slot].size0;
    family_.add(slots_[slot].stats, row(0, i));
  }
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    for (int j = 0; j < m.size(); ++j) family_.add(slots_[label0_[m.route(j)]].stats, row(g, j));
  }
  for (int slot : active_) {
    auto& c = slots_[slot];
    c.log_marginal = family_.log_marginal(c.stats);
    if (kernel_ == PartitionKernel::auxiliary) c.phi = family_.sample_posterior(c.stats, rng);
  }
}

template <class Family>
double ChainState<Family>::log_marginal_total() const {
  double total = 0.0;
  for (int slot : active_) total += slots_[slot].log_marginal;
  return total;
}

template <class Family>
double ChainState<Family>::log_likelihood() const {
  if (kernel_ == PartitionKernel::collapsed) return log_marginal_total();
  double total = 0.0;
  for (int i = 0; i < n0(); ++i) total += family_.log_density(row(0, i), slots_[label0_[i]].phi);
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    for (int j = 0; j < m.size(); ++j) total += family_.log_density(row(g, j), slots_[label0_[m.route(j)]].phi);
  }
  return total;
}

template <class Family>
double ChainState<Family>::log_energy() const {
  double total = 0.0;
  for (int g = 1; g < num_groups(); ++g) {
    const auto& dist = current_dist_[g - 1];
    total += fbc::log_energy(matching_.groups[g - 1].T, [&](int j) { return dist[j]; },
                             static_cast<int>(dist.size()), prior_.tau);
  }
  return total;
}

template <class Family>
bool ChainState<Family>::mh_step(int group, Rng& rng) {
  auto& m = matching_.groups.at(group - 1);
  auto& members = mask_list_[group - 1];
  auto& others = unmask_list_[group - 1];
  auto& dist = current_dist_[group - 1];
  const int nb = m.size();
  ++proposals_;

  const TSwap sw = draw_T_swap(nb, rng);
  const T0Move mv = draw_T0_move(nb, n0(), rng);
  MaskSwap ms;
  int leave_pos = -1, enter_pos = -1;
  if (!members.empty() && !others.empty()) {
    leave_pos = uniform_index(static_cast<int>(members.size()), rng);
    enter_pos = uniform_index(static_cast<int>(others.size()), rng);
    ms = {members[leave_pos], others[enter_pos]};
  }

  // At most five instances can change route.
  int touched[5];
  int old_slot[5];
  int count = 0;
  auto touch = [&](int j) {
    for (int k = 0; k < count; ++k)
      if (touched[k] == j) return;
    touched[count++] = j;
  };
  touch(sw.i1);
  touch(sw.i2);
  touch(mv.position);
  if (!ms.identity()) {
    touch(ms.leaving);
    touch(ms.entering);
  }
  for (int k = 0; k < count; ++k) old_slot[k] = label0_[m.route(touched[k])];

  double new_d1 = dist[sw.i1], new_d2 = dist[sw.i2];
  double log_ratio = 0.0;
  if (sw.i1 != sw.i2) {
    new_d1 = matched_distance(group, sw.i1, m.T[sw.i2]);
    new_d2 = matched_distance(group, sw.i2, m.T[sw.i1]);
    log_ratio -= (new_d1 + new_d2 - dist[sw.i1] - dist[sw.i2]) / (static_cast<double>(nb) * prior_.tau);
  }

  const int old_t0 = m.T0[mv.position];
  std::swap(m.T[sw.i1], m.T[sw.i2]);
  m.T0[mv.position] = mv.target;
  if (!ms.identity()) {
    m.in_mask[ms.leaving] = 0;
    m.in_mask[ms.entering] = 1;
  }

  snapshot_slot_.clear();
  auto snapshot = [&](int slot) {
    if (std::find(snapshot_slot_.begin(), snapshot_slot_.end(), slot) != snapshot_slot_.end()) return;
    const auto k = snapshot_slot_.size();
    snapshot_slot_.push_back(slot);
    if (snapshot_.size() <= k) snapshot_.push_back(slots_[slot]);
    else snapshot_[k] = slots_[slot];
  };
  for (int k = 0; k < count; ++k) {
    const int j = touched[k];
    const int to = label0_[m.route(j)];
    const int from = old_slot[k];
    if (to == from) continue;
    snapshot(from);
    snapshot(to);
    if (kernel_ == PartitionKernel::auxiliary)
      log_ratio += family_.log_density(row(group, j), slots_[to].phi) -
                   family_.log_density(row(group, j), slots_[from].phi);
    family_.remove(slots_[from].stats, row(group, j));
    family_.add(slots_[to].stats, row(group, j));
  }
  for (int slot : snapshot_slot_) {
    auto& c = slots_[slot];
    const double updated = family_.log_marginal(c.stats);
    if (kernel_ == PartitionKernel::collapsed) log_ratio += updated - c.log_marginal;
    c.log_marginal = updated;
  }

  bool accept = log_ratio >= 0.0;
  if (!accept) accept = std::log(std::uniform_real_distribution<double>(0.0, 1.0)(rng)) < log_ratio;

  if (accept) {
    ++accepts_;
    dist[sw.i1] = new_d1;
    dist[sw.i2] = new_d2;
    if (!ms.identity()) {
      auto& pos = mask_pos_[group - 1];
      members[leave_pos] = ms.entering;
      others[enter_pos] = ms.leaving;
      pos[ms.entering] = leave_pos;
      pos[ms.leaving] = enter_pos;
    }
    return true;
  }
  for (std::size_t k = 0; k < snapshot_slot_.size(); ++k) slots_[snapshot_slot_[k]] = snapshot_[k];
  std::swap(m.T[sw.i1], m.T[sw.i2]);
  m.T0[mv.position] = old_t0;
  if (!ms.identity()) {
    m.in_mask[ms.leaving] = 1;
    m.in_mask[ms.entering] = 0;
  }
  return false;
}

template <class Family>
void ChainState<Family>::build_routing() {
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    auto& offsets = routed_offsets_[g - 1];
    auto& items = routed_items_[g - 1];
    offsets.assign(n0() + 1, 0);
    for (int j = 0; j < m.size(); ++j) ++offsets[m.route(j) + 1];
    for (int i = 0; i < n0(); ++i) offsets[i + 1] += offsets[i];
    items.resize(m.size());
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (int j = 0; j < m.size(); ++j) items[fill[m.route(j)]++] = j;
  }
}

template <class Family>
template <typename Fn>
void ChainState<Family>::for_block(int i, Fn&& fn) const {
  fn(row(0, i));
  for (int g = 1; g < num_groups(); ++g) {
    const auto& offsets = routed_offsets_[g - 1];
    const auto& items = routed_items_[g - 1];
    for (int k = offsets[i]; k < offsets[i + 1]; ++k) fn(row(g, items[k]));
  }
}

template <class Family>
void ChainState<Family>::load_block(int i) {
  Family::clear(block_);
  for_block(i, [&](const auto& x) { family_.add(block_, x); });
}

template <class Family>
std::vector<int> ChainState<Family>::sweep_order(bool random_scan, Rng& rng) const {
  std::vector<int> order(n0());
  std::iota(order.begin(), order.end(), 0);
  if (random_scan) std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <class Family>
double ChainState<Family>::log_v_ratio(const VCoefficients& v, int t) const {
  // t == 0: no cluster is left, so the new cluster is the only option.
  if (t == 0) return 0.0;
  if (t + 1 > v.t_max()) return kNegInf;
  return v.log_v(t + 1) - v.log_v(t);
}

template <class Family>
void ChainState<Family>::gibbs_collapsed(const VCoefficients& v, bool random_scan, Rng& rng) {
  if (v.n() != n0()) throw DimensionError("V table built for a different n0");
  build_routing();
  const double log_gamma = std::log(prior_.gamma);
  for (int i : sweep_order(random_scan, rng)) {
    load_block(i);
    const int from = label0_[i];
    auto& c = slots_[from];
    family_.unmerge(c.stats, block_);
    if (--c.size0 == 0) release_slot(from);
    else c.log_marginal = family_.log_marginal(c.stats);

    const int t = num_clusters();
    weights_.resize(t + 1);
    merged_.resize(t);
    for (int k = 0; k < t; ++k) {
      const auto& cl = slots_[active_[k]];
      merged_[k] = family_.log_marginal_merged(cl.stats, block_);
      weights_[k] = std::log(cl.size0 + prior_.gamma) + merged_[k] - cl.log_marginal;
    }
    const double block_marginal = family_.log_marginal(block_);
    weights_[t] = log_gamma + log_v_ratio(v, t) + block_marginal;

    const auto pick = static_cast<int>(sample_log_categorical(weights_, rng));
    int to;
    if (pick == t) {
      to = new_slot();
      auto& fresh = slots_[to];
      fresh.stats = block_;
      fresh.size0 = 1;
      fresh.log_marginal = block_marginal;
    } else {
      to = active_[pick];
      auto& cl = slots_[to];
      family_.merge(cl.stats, block_);
      ++cl.size0;
      cl.log_marginal = merged_[pick];
    }
    label0_[i] = to;
  }
}

template <class Family>
void ChainState<Family>::gibbs_auxiliary(const VCoefficients& v, int aux_components, bool random_scan, Rng& rng) {
  if (v.n() != n0()) throw DimensionError("V table built for a different n0");
  if (aux_components < 1) throw std::invalid_argument("aux_components must be at least 1");
  build_routing();
  aux_.resize(aux_components);
  const double log_aux = std::log(prior_.gamma / aux_components);
  for (int i : sweep_order(random_scan, rng)) {
    load_block(i);
    const int from = label0_[i];
    auto& c = slots_[from];
    family_.unmerge(c.stats, block_);
    int reused = 0;
    if (--c.size0 == 0) {
      // The emptied cluster's parameter becomes the first auxiliary.
      aux_[0] = std::move(c.phi);
      reused = 1;
      release_slot(from);
    } else {
      c.log_marginal = family_.log_marginal(c.stats);
    }
    for (int h = reused; h < aux_components; ++h) aux_[h] = family_.sample_prior(rng);

    auto block_log_f = [&](const Params& phi) {
      double total = 0.0;
      for_block(i, [&](const auto& x) { total += family_.log_density(x, phi); });
      return total;
    };
    const int t = num_clusters();
    weights_.resize(t + aux_components);
    for (int k = 0; k < t; ++k) {
      const auto& cl = slots_[active_[k]];
      weights_[k] = std::log(cl.size0 + prior_.gamma) + block_log_f(cl.phi);
    }
    const double new_weight = log_aux + log_v_ratio(v, t);
    for (int h = 0; h < aux_components; ++h) weights_[t + h] = new_weight + block_log_f(aux_[h]);

    const auto pick = static_cast<int>(sample_log_categorical(weights_, rng));
    int to;
    if (pick >= t) {
      to = new_slot();
      auto& fresh = slots_[to];
      fresh.stats = block_;
      fresh.size0 = 1;
      fresh.log_marginal = family_.log_marginal(block_);
      fresh.phi = std::move(aux_[pick - t]);
    } else {
      to = active_[pick];
      auto& cl = slots_[to];
      family_.merge(cl.stats, block_);
      ++cl.size0;
      cl.log_marginal = family_.log_marginal(cl.stats);
    }
    label0_[i] = to;
  }
  for (int slot : active_) slots_[slot].phi = family_.sample_posterior(slots_[slot].stats, rng);
}

template <class Family>
CoherenceReport ChainState<Family>::check_coherence() const {
  CoherenceReport report;
  auto note = [&](const std::string& msg) {
    if (report.message.empty()) report.message = msg;
  };
  std::vector<int> sizes;
  for (const auto& g : groups_) sizes.push_back(static_cast<int>(g.rows()));
  if (num_groups() > 1) {
    const auto valid = validate_matching(matching_, sizes);
    report.matching_valid = valid.ok();
    if (!valid) note(valid.message);
  }

  std::vector<Stats> fresh(slots_.size(), family_.empty());
  std::vector<int> size0(slots_.size(), 0);
  for (int i = 0; i < n0(); ++i) {
    const int slot = label0_[i];
    if (slot < 0 || slot >= static_cast<int>(slots_.size()) || active_pos_[slot] < 0) {
      report.routes_consistent = false;
      note("reference instance " + std::to_string(i) + " points at an inactive cluster");
      return report;
    }
    family_.add(fresh[slot], row(0, i));
    ++size0[slot];
  }
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    for (int j = 0; j < m.size(); ++j) family_.add(fresh[label0_[m.route(j)]], row(g, j));

    const auto& members = mask_list_[g - 1];
    const auto& others = unmask_list_[g - 1];
    if (static_cast<int>(members.size()) != m.mask_size) report.routes_consistent = false;
    for (std::size_t k = 0; k < members.size(); ++k)
      if (!m.in_mask[members[k]] || mask_pos_[g - 1][members[k]] != static_cast<int>(k)) report.routes_consistent = false;
    for (std::size_t k = 0; k < others.size(); ++k)
      if (m.in_mask[others[k]] || mask_pos_[g - 1][others[k]] != static_cast<int>(k)) report.routes_consistent = false;
    if (!report.routes_consistent) note("mask bookkeeping out of sync for group " + std::to_string(g));
  }

  double cached_total = 0.0, fresh_total = 0.0;
  for (int slot : active_) {
    const auto& c = slots_[slot];
    if (c.size0 != size0[slot]) {
      report.routes_consistent = false;
      note("cluster size cache out of sync");
    }
    report.max_stat_error = std::max(report.max_stat_error, Family::stats_error(c.stats, fresh[slot]));
    cached_total += c.log_marginal;
    fresh_total += family_.log_marginal(fresh[slot]);
  }
  report.log_likelihood_error = std::abs(cached_total - fresh_total);

  double cached_energy = 0.0, fresh_energy = 0.0;
  for (int g = 1; g < num_groups(); ++g) {
    const auto& m = matching_.groups[g - 1];
    const double scale = static_cast<double>(m.size()) * prior_.tau;
    for (int j = 0; j < m.size(); ++j) {
      cached_energy -= current_dist_[g - 1][j] / scale;
      fresh_energy -= feature_distance(row(0, m.T[j]), row(g, j), kind_) / scale;
    }
  }
  report.log_energy_error = std::abs(cached_energy - fresh_energy);
  return report;
}

// ---------------------------------------------------------------------------------------
// Driver

template <class Family>
ChainState<Family> init_state(const GroupedDataset& data, const PriorConfig& prior, const SamplerConfig& config,
                              Rng& rng) {
  Family family(data.dim(), prior);
  if (!config.fairness)
    return ChainState<Family>({data.pooled()}, data.kind(), family, prior, {}, config.kernel, rng);
  MatchingState matching;
  const int n0 = data.size(0);
  for (int b = 1; b < data.num_groups(); ++b) {
    auto residual = select_R(data.group(0), data.kind(), data.size(b) % n0, config.residual_strategy, rng);
    matching.groups.push_back(init_group_matching(n0, data.size(b), std::move(residual), config.mask_size(b), rng));
  }
  return ChainState<Family>(data.groups(), data.kind(), family, prior, std::move(matching), config.kernel, rng);
}

template ChainState<NormalGamma> init_state(const GroupedDataset&, const PriorConfig&, const SamplerConfig&, Rng&);
template ChainState<BetaBernoulli> init_state(const GroupedDataset&, const PriorConfig&, const SamplerConfig&, Rng&);

namespace {

// Per-group assignment for reporting; the pooled chain is split back by group.
template <class Family>
Assignment report_assignment(const ChainState<Family>& state, const GroupedDataset& data, bool fairness) {
  if (fairness) return state.assignment();
  const Partition partition = state.partition();
  const auto& labels = partition.labels();
  Assignment raw;
  std::size_t offset = 0;
  for (int b = 0; b < data.num_groups(); ++b) {
    raw.labels.emplace_back(labels.begin() + offset, labels.begin() + offset + data.size(b));
    offset += data.size(b);
  }
  return canonicalize(raw);
}

template <class Family>
ChainResult run_chain(const GroupedDataset& data, const PriorConfig& prior, const SamplerConfig& config) {
  Rng rng(config.seed);
  auto state = init_state<Family>(data, prior, config, rng);
  const int n = state.n0();
  const auto v = compute_log_v(n, std::min(n, kMaxClusters), prior.gamma, prior.kappa);
  const auto sizes = data.group_sizes();

  ChainResult result;
  result.seed = config.seed;
  result.fairness = config.fairness;
  result.trace.reserve(config.max_iter);
  for (int it = 1; it <= config.max_iter; ++it) {
    if (config.fairness) mh_step_matching(state, config, rng);
    if (config.kernel == PartitionKernel::collapsed) gibbs_partition_conjugate(state, v, config, rng);
    else gibbs_partition_nonconjugate(state, v, config, rng);

    const double nll = -state.log_marginal_total();
    result.trace.push_back({it, state.num_clusters(), nll});
    if (it <= config.burn_in) continue;

    ChainSample s;
    s.iteration = it;
    s.num_clusters = state.num_clusters();
    s.assignment = report_assignment(state, data, config.fairness);
    s.matching_digest = matching_digest(state.matching());
    if (config.keep_matching) s.matching = state.matching();
    s.delta = delta_fairness(sizes, s.assignment);
    s.bal = balance(sizes, s.assignment);
    s.cost = data.kind() == FeatureKind::binary ? categorical_cost(data, s.assignment, prior.alpha)
                                                : cost(data, s.assignment);
    s.nll = nll;
    result.samples.push_back(std::move(s));
  }
  if (!result.samples.empty()) result.reported = uniform_index(static_cast<int>(result.samples.size()), rng);
  return result;
}

}  // namespace

ChainResult run_fbc(const GroupedDataset& data, const PriorConfig& prior, const SamplerConfig& config) {
  prior.validate();
  config.validate(data.group_sizes());
  if (config.family == FamilyKind::beta_bernoulli) {
    if (data.kind() != FeatureKind::binary) throw InvalidData("beta-bernoulli family requires binary features");
    return run_chain<BetaBernoulli>(data, prior, config);
  }
  return run_chain<NormalGamma>(data, prior, config);
}

template class ChainState<NormalGamma>;
template class ChainState<BetaBernoulli>;

}  // namespace fbc
