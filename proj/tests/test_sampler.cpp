// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/data_io.hpp"
#include "fbc/metrics.hpp"
#include "fbc/sampler.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

using namespace fbc;

namespace {

FeatureMatrix column(std::vector<double> v) {
  FeatureMatrix x(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = v[i];
  return x;
}

std::vector<std::vector<double>> rows_of(const FeatureMatrix& x) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.emplace_back(x.row(i).data(), x.row(i).data() + x.cols());
  return out;
}

GroupMatching fixed_matching(std::vector<int> T, std::vector<int> T0, std::vector<char> mask) {
  GroupMatching m;
  m.T = std::move(T);
  m.T0 = std::move(T0);
  m.in_mask = std::move(mask);
  m.mask_size = static_cast<int>(std::count(m.in_mask.begin(), m.in_mask.end(), 1));
  m.beta = 1;
  return m;
}

GroupedDataset random_dataset(Rng& rng, std::vector<int> sizes, int d) {
  std::normal_distribution<double> z;
  std::vector<FeatureMatrix> groups;
  for (int n : sizes) {
    FeatureMatrix x(n, d);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) x(i, k) = z(rng) + (i % 3) * 2.5;
    groups.push_back(x);
  }
  return GroupedDataset(groups, FeatureKind::continuous);
}

// Empirical partition frequencies of a fixed-matching chain against the enumerated posterior.
double small_posterior_tv(PartitionKernel kernel, long sweeps) {
  const auto x0 = column({-1.0, -0.6, 0.8, 1.3});
  const auto x1 = column({-0.9, 1.1, -0.4, 0.5});
  MatchingState ms;
  ms.groups.push_back(fixed_matching({2, 3, 0, 1}, {0, 0, 3, 0}, {0, 0, 1, 0}));
  PriorConfig prior;
  Rng rng(21);
  ChainState<NormalGamma> state({x0, x1}, FeatureKind::continuous, NormalGamma(1, prior), prior, ms, kernel, rng);
  const auto v = compute_log_v(4, 4, prior.gamma, prior.kappa);
  std::map<std::vector<int>, long> counts;
  for (long s = 0; s < sweeps; ++s) {
    if (kernel == PartitionKernel::collapsed) state.gibbs_collapsed(v, false, rng);
    else state.gibbs_auxiliary(v, 3, false, rng);
    ++counts[state.partition().labels()];
  }
  const auto exact = oracle::exact_partition_posterior(rows_of(x0), rows_of(x1), state.routes(1), prior.gamma,
                                                       prior.kappa, prior.a, prior.b);
  return oracle::total_variation(counts, exact);
}

}  // namespace

TEST_CASE("medoids split two well separated pairs") {
  const auto x = column({0.0, 0.1, 10.0, 10.1});
  auto medoids = pam_medoids(x, FeatureKind::continuous, 2);
  std::sort(medoids.begin(), medoids.end());
  REQUIRE(medoids.size() == 2);
  CHECK(medoids[0] <= 1);
  CHECK(medoids[1] >= 2);
}

TEST_CASE("medoids are locally optimal under single swaps") {
  Rng rng(22);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    FeatureMatrix x(9, 2);
    for (int i = 0; i < 9; ++i) x.row(i) << z(rng) + (i % 3) * 4, z(rng);
    auto objective = [&](const std::vector<int>& med) {
      double total = 0.0;
      for (int i = 0; i < 9; ++i) {
        double best = 1e300;
        for (int m : med) best = std::min(best, (x.row(i) - x.row(m)).squaredNorm());
        total += best;
      }
      return total;
    };
    const auto med = pam_medoids(x, FeatureKind::continuous, 3);
    const double found = objective(med);
    for (std::size_t slot = 0; slot < med.size(); ++slot)
      for (int c = 0; c < 9; ++c) {
        if (std::find(med.begin(), med.end(), c) != med.end()) continue;
        auto swapped = med;
        swapped[slot] = c;
        CHECK(objective(swapped) >= found - 1e-9);
      }
  }
}

TEST_CASE("random residual sets") {
  Rng rng(23);
  const FeatureMatrix x = FeatureMatrix::Random(9, 2);
  CHECK(select_R(x, FeatureKind::continuous, 0, ResidualStrategy::random, rng).empty());
  for (int rep = 0; rep < 50; ++rep) {
    const auto r = select_R(x, FeatureKind::continuous, 8, ResidualStrategy::random, rng);
    CHECK(r.size() == 8);
    CHECK(std::set<int>(r.begin(), r.end()).size() == 8);
    CHECK(std::is_sorted(r.begin(), r.end()));
  }
  CHECK_THROWS_AS(select_R(x, FeatureKind::continuous, 9, ResidualStrategy::random, rng), std::invalid_argument);
}

TEST_CASE("initial matchings are valid and permutations are uniform") {
  Rng rng(24);
  std::map<std::vector<int>, int> seen;
  for (int rep = 0; rep < 6000; ++rep) ++seen[init_group_matching(3, 3, {}, 0, rng).T];
  CHECK(seen.size() == 6);
  for (const auto& [perm, count] : seen) CHECK(std::abs(count - 1000) < 130);
  for (int rep = 0; rep < 200; ++rep) {
    const int n0 = 1 + rep % 6, nb = n0 + rep % 11, r = nb % n0;
    auto residual = select_R(FeatureMatrix::Zero(n0, 1), FeatureKind::continuous, r, ResidualStrategy::random, rng);
    const auto m = init_group_matching(n0, nb, residual, rep % (nb + 1), rng);
    CHECK(validate_matching(m, n0, nb).ok());
  }
}

TEST_CASE("T swaps exchange two entries and keep the map valid") {
  Rng rng(25);
  const std::vector<int> T{2, 3, 0, 1};
  std::set<std::vector<int>> outcomes;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto next = propose_T_swap(T, rng);
    int changed = 0;
    for (int j = 0; j < 4; ++j) changed += next[j] != T[j];
    CHECK(changed == 2);
    outcomes.insert(next);
  }
  CHECK(outcomes.size() == 6);
  CHECK(outcomes.count({0, 3, 2, 1}));
  CHECK(propose_T_swap({1, 1}, rng) == std::vector<int>{1, 1});
  CHECK(propose_T_swap({0}, rng) == std::vector<int>{0});

  auto m = init_group_matching(4, 11, {0, 2, 3}, 2, rng);
  for (int rep = 0; rep < 1000; ++rep) {
    m.T = propose_T_swap(m.T, rng);
    REQUIRE(validate_matching(m, 4, 11).ok());
  }
}

TEST_CASE("T0 and mask proposals") {
  Rng rng(26);
  const std::vector<int> T0{0, 1, 2, 3, 4};
  for (int rep = 0; rep < 200; ++rep) {
    const auto next = propose_T0(T0, 5, rng);
    int changed = 0;
    for (int j = 0; j < 5; ++j) changed += next[j] != T0[j];
    CHECK(changed <= 1);
  }
  const std::vector<char> none(6, 0), some{1, 0, 1, 0, 0, 0};
  CHECK(propose_E(none, rng) == none);
  CHECK(propose_E(std::vector<char>(3, 1), rng) == std::vector<char>(3, 1));
  for (int rep = 0; rep < 200; ++rep) {
    const auto next = propose_E(some, rng);
    CHECK(std::count(next.begin(), next.end(), 1) == 2);
    int changed = 0;
    for (int j = 0; j < 6; ++j) changed += next[j] != some[j];
    CHECK(changed == 2);
  }
}

TEST_CASE("initial state caches equal a rebuild") {
  Rng rng(27);
  const auto data = random_dataset(rng, {7, 16}, 2);
  SamplerConfig config;
  config.mask_sizes = {3};
  const auto state = init_state<NormalGamma>(data, PriorConfig{}, config, rng);
  const auto report = state.check_coherence();
  CHECK(report.matching_valid);
  CHECK(report.routes_consistent);
  CHECK(report.max_stat_error < 1e-12);
  CHECK(report.log_likelihood_error < 1e-10);
  CHECK(state.num_clusters() == 1);
}

TEST_CASE("MH steps keep every cache exact") {
  Rng rng(28);
  for (auto kernel : {PartitionKernel::collapsed, PartitionKernel::auxiliary}) {
    const auto data = random_dataset(rng, {6, 9, 14}, 2);
    SamplerConfig config;
    config.mask_sizes = {2, 5};
    config.kernel = kernel;
    auto state = init_state<NormalGamma>(data, PriorConfig{}, config, rng);
    const auto v = compute_log_v(6, 6, 1.0, 0.1);
    for (int rep = 0; rep < 100; ++rep) {
      if (rep % 10 == 0) state.gibbs_collapsed(v, false, rng);
      state.mh_step(1 + rep % 2, rng);
      const auto report = state.check_coherence();
      REQUIRE(report.matching_valid);
      REQUIRE(report.routes_consistent);
      CHECK(report.log_likelihood_error < 1e-10);
      CHECK(report.log_energy_error < 1e-10);
    }
    CHECK(state.proposals() == 100);
  }
}

TEST_CASE("neutral proposals are always accepted") {
  Rng rng(29);
  const FeatureMatrix x0 = FeatureMatrix::Constant(4, 2, 0.5), x1 = FeatureMatrix::Constant(4, 2, 0.5);
  MatchingState ms;
  ms.groups.push_back(init_group_matching(4, 4, {}, 2, rng));
  ChainState<NormalGamma> state({x0, x1}, FeatureKind::continuous, NormalGamma(2, 1, 1), PriorConfig{}, ms,
                                PartitionKernel::collapsed, rng);
  for (int rep = 0; rep < 200; ++rep) state.mh_step(1, rng);
  CHECK(state.accepts() == state.proposals());
}

TEST_CASE("a cold energy drives T to the closest matching") {
  Rng rng(30);
  const auto x0 = column({0, 1, 2, 3, 4}), x1 = column({0.1, 1.1, 2.1, 3.1, 4.1});
  PriorConfig prior;
  prior.tau = 1e-4;
  MatchingState ms;
  ms.groups.push_back(init_group_matching(5, 5, {}, 0, rng));
  ChainState<NormalGamma> state({x0, x1}, FeatureKind::continuous, NormalGamma(1, prior), prior, ms,
                                PartitionKernel::collapsed, rng);
  for (int rep = 0; rep < 3000; ++rep) state.mh_step(1, rng);
  CHECK(state.matching().groups[0].T == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(state.accepts() < state.proposals());
}

TEST_CASE("MH over two matchings visits each in proportion to its target") {
  Rng rng(31);
  const auto x0 = column({-1.0, 1.2}), x1 = column({-0.7, 0.9});
  PriorConfig prior;
  prior.tau = 0.8;
  MatchingState ms;
  ms.groups.push_back(fixed_matching({0, 1}, {0, 0}, {0, 0}));
  ChainState<NormalGamma> state({x0, x1}, FeatureKind::continuous, NormalGamma(1, prior), prior, ms,
                                PartitionKernel::collapsed, rng);
  state.set_partition(Partition({0, 1}), rng);
  long identity = 0;
  const long steps = 200000;
  for (long s = 0; s < steps; ++s) {
    state.mh_step(1, rng);
    identity += state.matching().groups[0].T[0] == 0;
  }
  auto log_target = [&](const std::vector<int>& T) {
    double lt = 0.0;
    for (int j = 0; j < 2; ++j) lt -= std::abs(x0(T[j], 0) - x1(j, 0)) / (2 * prior.tau);
    for (int i = 0; i < 2; ++i) {
      const int j = T[0] == i ? 0 : 1;
      lt += oracle::predictive_log_marginal({{x0(i, 0)}, {x1(j, 0)}}, prior.a, prior.b);
    }
    return lt;
  };
  const double p_identity = 1.0 / (1.0 + std::exp(log_target({1, 0}) - log_target({0, 1})));
  CHECK(static_cast<double>(identity) / steps == doctest::Approx(p_identity).epsilon(0.02));
}

TEST_CASE("collapsed Gibbs matches the enumerated posterior") {
  CHECK(small_posterior_tv(PartitionKernel::collapsed, 100000) < 0.02);
}

TEST_CASE("auxiliary Gibbs matches the enumerated posterior") {
  CHECK(small_posterior_tv(PartitionKernel::auxiliary, 100000) < 0.02);
}

TEST_CASE("a single reference point stays in its cluster") {
  Rng rng(32);
  for (auto kernel : {PartitionKernel::collapsed, PartitionKernel::auxiliary}) {
    MatchingState ms;
    ms.groups.push_back(init_group_matching(1, 3, {}, 1, rng));
    ChainState<NormalGamma> state({column({0.2}), column({1, 2, 3})}, FeatureKind::continuous, NormalGamma(1, 1, 1),
                                  PriorConfig{}, ms, kernel, rng);
    const auto v = compute_log_v(1, 1, 1.0, 0.1);
    for (int s = 0; s < 20; ++s) {
      if (kernel == PartitionKernel::collapsed) state.gibbs_collapsed(v, false, rng);
      else state.gibbs_auxiliary(v, 2, false, rng);
      CHECK(state.num_clusters() == 1);
    }
  }
}

TEST_CASE("many auxiliaries recover the collapsed new-cluster weight") {
  Rng rng(33);
  for (double x : {0.0, 0.8, -1.7}) {
    NormalGamma ng(1, 1.0, 1.0);
    const auto block = column({x});
    const double log_ratio = -4.2;
    const double estimate = auxiliary_new_cluster_log_weight(ng, block, 10000, 1.0, log_ratio, rng);
    const double exact = log_ratio + oracle::predictive_log_marginal({{x}}, 1.0, 1.0);
    CHECK(std::abs(std::exp(estimate - exact) - 1.0) < 0.05);
  }
}

TEST_CASE("fair chains emit zero delta and are reproducible") {
  Rng rng(34);
  const auto data = random_dataset(rng, {12, 24}, 2);
  SamplerConfig config;
  config.max_iter = 60;
  config.burn_in = 20;
  config.seed = 5;
  const auto a = run_fbc(data, PriorConfig{}, config);
  const auto b = run_fbc(data, PriorConfig{}, config);
  REQUIRE(a.samples.size() == 40);
  CHECK(a.trace.size() == 60);
  CHECK(a.reported >= 0);
  CHECK(a.reported < 40);
  for (std::size_t s = 0; s < a.samples.size(); ++s) {
    CHECK(a.samples[s].delta == 0.0);
    CHECK(a.samples[s].assignment.labels == b.samples[s].assignment.labels);
    CHECK(a.samples[s].matching_digest == b.samples[s].matching_digest);
  }
}

TEST_CASE("fairness off pools the groups") {
  Rng rng(35);
  const auto data = random_dataset(rng, {10, 15}, 2);
  SamplerConfig config;
  config.max_iter = 30;
  config.burn_in = 10;
  config.fairness = false;
  const auto r = run_fbc(data, PriorConfig{}, config);
  for (const auto& s : r.samples) {
    CHECK(s.assignment.labels[0].size() == 10);
    CHECK(s.assignment.labels[1].size() == 15);
    CHECK(s.delta == doctest::Approx(delta_fairness(data.group_sizes(), s.assignment)));
  }
}

TEST_CASE("sampler config validation") {
  SamplerConfig config;
  CHECK_NOTHROW(config.validate({5, 8}));
  config.mask_sizes = {9};
  CHECK_THROWS(config.validate({5, 8}));
  config.mask_sizes = {1, 2};
  CHECK_THROWS(config.validate({5, 8}));
  config = {};
  config.burn_in = config.max_iter;
  CHECK_THROWS(config.validate({5, 8}));
  CHECK(parse_family(to_string(FamilyKind::beta_bernoulli)) == FamilyKind::beta_bernoulli);
  CHECK(parse_partition_kernel("auxiliary") == PartitionKernel::auxiliary);
  CHECK(parse_residual_strategy("medoids") == ResidualStrategy::medoids);
  CHECK_THROWS(parse_family("gaussian"));
}

TEST_CASE("beta-bernoulli runs need binary data") {
  Rng rng(36);
  const auto data = random_dataset(rng, {5, 5}, 2);
  SamplerConfig config;
  config.family = FamilyKind::beta_bernoulli;
  config.max_iter = 5;
  config.burn_in = 1;
  CHECK_THROWS_AS(run_fbc(data, PriorConfig{}, config), InvalidData);
}
