// Apache License, Version 2.0, refer to LICENSE.txt

#include "fbc/core.hpp"
#include "fbc/numerics.hpp"
#include "fbc/sampler.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace fbc;

namespace {

Assignment two_groups(std::vector<int> z0, std::vector<int> z1) {
  Assignment a;
  a.num_clusters = std::max(*std::max_element(z0.begin(), z0.end()), *std::max_element(z1.begin(), z1.end()));
  a.labels = {std::move(z0), std::move(z1)};
  return a;
}

GroupMatching permutation_matching(std::vector<int> T) {
  GroupMatching m;
  const int n = static_cast<int>(T.size());
  m.T = std::move(T);
  m.T0.assign(n, 0);
  m.in_mask.assign(n, 0);
  m.beta = 1;
  return m;
}

Partition random_partition(int n, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, std::max(0, n / 2));
  std::vector<int> labels(n);
  for (auto& l : labels) l = pick(rng);
  return Partition(labels);
}

}  // namespace

TEST_CASE("delta of identical proportions is zero") {
  CHECK(delta_fairness({3, 3}, two_groups({1, 1, 2}, {1, 1, 2})) == 0.0);
}

TEST_CASE("delta of disjoint clusters is one") {
  CHECK(delta_fairness({2, 2}, two_groups({1, 1}, {2, 2})) == doctest::Approx(1.0));
}

TEST_CASE("delta hand example") {
  CHECK(delta_fairness({4, 4}, two_groups({1, 1, 2, 2}, {1, 2, 2, 2})) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("delta rejects mismatched lengths") {
  CHECK_THROWS_AS(delta_fairness({3, 3}, two_groups({1, 1}, {1, 1, 1})), DimensionError);
}

TEST_CASE("delta agrees with the two-group sum on random labelings") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const int n0 = 1 + rep % 9, n1 = n0 + rep % 5, k = 1 + rep % 4;
    std::uniform_int_distribution<int> label(1, k);
    std::vector<int> z0(n0), z1(n1);
    for (auto& z : z0) z = label(rng);
    for (auto& z : z1) z = label(rng);
    auto a = two_groups(z0, z1);
    a.num_clusters = k;
    CHECK(delta_fairness({n0, n1}, a) == doctest::Approx(oracle::two_group_delta(z0, z1, k)).epsilon(1e-14));
  }
}

TEST_CASE("balance examples") {
  CHECK(balance({2, 2}, two_groups({1, 2}, {2, 1})) == 1.0);
  CHECK(balance({1, 4}, two_groups({1}, {1, 1, 1, 1})) == doctest::Approx(0.25));
  CHECK(balance({1, 3}, two_groups({1}, {2, 2, 2})) == 0.0);
}

TEST_CASE("assignments follow a permutation matching") {
  MatchingState ms;
  ms.groups.push_back(permutation_matching({2, 3, 0, 1}));
  const auto z = assignments_from(Partition::from_blocks({{0, 1}, {2, 3}}, 4), ms);
  CHECK(z.labels[0] == std::vector<int>{1, 1, 2, 2});
  CHECK(z.labels[1] == std::vector<int>{2, 2, 1, 1});
}

TEST_CASE("full mask with T0 equal to T routes like an empty mask") {
  MatchingState plain, masked;
  plain.groups.push_back(permutation_matching({2, 3, 0, 1}));
  auto m = permutation_matching({2, 3, 0, 1});
  m.T0 = m.T;
  m.in_mask.assign(4, 1);
  m.mask_size = 4;
  masked.groups.push_back(m);
  const auto part = Partition::from_blocks({{0, 3}, {1}, {2}}, 4);
  CHECK(assignments_from(part, plain).labels == assignments_from(part, masked).labels);
}

TEST_CASE("identity matching on singletons is fair") {
  MatchingState ms;
  ms.groups.push_back(permutation_matching({0, 1}));
  const auto z = assignments_from(Partition::from_blocks({{0}, {1}}, 2), ms);
  CHECK(z.labels[1] == std::vector<int>{1, 2});
  CHECK(delta_fairness({2, 2}, z) == 0.0);
}

TEST_CASE("assignments are invariant to the partition's label names") {
  MatchingState ms;
  ms.groups.push_back(permutation_matching({1, 0, 3, 2}));
  CHECK(assignments_from(Partition({5, 5, 2, 9}), ms).labels == assignments_from(Partition({0, 0, 1, 2}), ms).labels);
  CHECK(Partition({5, 5, 2, 9}) == Partition({0, 0, 1, 2}));
}

TEST_CASE("validate_matching accepts a permutation") {
  CHECK(validate_matching(permutation_matching({3, 0, 2, 1}), 4, 4).ok());
}

TEST_CASE("validate_matching accepts a residual-respecting map") {
  GroupMatching m;
  m.T = {0, 1, 0, 1, 0};
  m.T0.assign(5, 1);
  m.in_mask.assign(5, 0);
  m.beta = 2;
  m.r = 1;
  m.residual = {0};
  CHECK(validate_matching(m, 2, 5).ok());
}

TEST_CASE("validate_matching reports each violation") {
  auto m = permutation_matching({0, 0, 0, 0});
  m.T0.assign(4, 0);
  m.beta = 2;
  auto report = validate_matching(m, 2, 4);
  REQUIRE_FALSE(report.ok());
  CHECK(*report.violation == MatchingViolation::not_onto);

  auto wrong_residual = permutation_matching({0, 1, 0, 1, 1});
  wrong_residual.beta = 2;
  wrong_residual.r = 1;
  wrong_residual.residual = {0};
  wrong_residual.T0.assign(5, 0);
  wrong_residual.in_mask.assign(5, 0);
  CHECK(*validate_matching(wrong_residual, 2, 5).violation == MatchingViolation::residual_mismatch);

  auto bad_mask = permutation_matching({1, 0});
  bad_mask.mask_size = 1;
  CHECK(*validate_matching(bad_mask, 2, 2).violation == MatchingViolation::mask_size);

  auto out_of_range = permutation_matching({1, 2});
  CHECK(*validate_matching(out_of_range, 2, 2).violation == MatchingViolation::out_of_range);

  auto uneven = permutation_matching({0, 0, 0, 1});
  uneven.beta = 2;
  CHECK(*validate_matching(uneven, 2, 4).violation == MatchingViolation::preimage_size);
}

TEST_CASE("exact matchings without a mask give zero delta for every partition") {
  Rng rng(11);
  for (int rep = 0; rep < 300; ++rep) {
    const int n0 = 1 + rep % 7, beta = 1 + rep % 3;
    MatchingState ms;
    ms.groups.push_back(init_group_matching(n0, beta * n0, {}, 0, rng));
    const auto part = random_partition(n0, rng);
    CHECK(delta_fairness({n0, beta * n0}, assignments_from(part, ms)) == 0.0);
  }
}

TEST_CASE("every zero-delta labeling is reachable by a permutation matching") {
  for (int n = 1; n <= 5; ++n) {
    std::vector<int> perm(n);
    for (const auto& rgs : oracle::set_partitions(n)) {
      const int k = oracle::num_blocks(rgs);
      std::vector<int> z0(n);
      for (int i = 0; i < n; ++i) z0[i] = rgs[i] + 1;
      std::vector<int> z1(n, 1);
      while (true) {
        Assignment a{{z0, z1}, k};
        bool used_all = true;
        for (int c = 1; c <= k; ++c)
          used_all &= std::count(z0.begin(), z0.end(), c) + std::count(z1.begin(), z1.end(), c) > 0;
        if (used_all && delta_fairness({n, n}, a) == 0.0) {
          bool reached = false;
          std::iota(perm.begin(), perm.end(), 0);
          do {
            MatchingState ms;
            ms.groups.push_back(permutation_matching(perm));
            reached = assignments_from(Partition(rgs), ms).labels[1] == z1;
          } while (!reached && std::next_permutation(perm.begin(), perm.end()));
          CHECK(reached);
        }
        int pos = 0;
        while (pos < n && z1[pos] == k) z1[pos++] = 1;
        if (pos == n) break;
        ++z1[pos];
      }
    }
  }
}

TEST_CASE("masked matchings stay within m over n1") {
  Rng rng(12);
  for (int rep = 0; rep < 500; ++rep) {
    const int n0 = 2 + rep % 6, beta = 1 + rep % 2, n1 = beta * n0;
    const int m = std::uniform_int_distribution<int>(0, n1)(rng);
    MatchingState ms;
    ms.groups.push_back(init_group_matching(n0, n1, {}, m, rng));
    const auto part = random_partition(n0, rng);
    CHECK(delta_fairness({n0, n1}, assignments_from(part, ms)) <= static_cast<double>(m) / n1 + 1e-12);
  }
}

TEST_CASE("three groups stay within the averaged mask bound") {
  Rng rng(13);
  for (int rep = 0; rep < 500; ++rep) {
    const int n0 = 2 + rep % 5, n1 = n0 * (1 + rep % 2), n2 = n0 * (1 + rep % 3);
    const int m1 = std::uniform_int_distribution<int>(0, n1)(rng);
    const int m2 = std::uniform_int_distribution<int>(0, n2)(rng);
    MatchingState ms;
    ms.groups.push_back(init_group_matching(n0, n1, {}, m1, rng));
    ms.groups.push_back(init_group_matching(n0, n2, {}, m2, rng));
    const auto z = assignments_from(random_partition(n0, rng), ms);
    CHECK(delta_fairness({n0, n1, n2}, z) <= 0.5 * (static_cast<double>(m1) / n1 + static_cast<double>(m2) / n2) + 1e-12);
  }
}

TEST_CASE("residual-proportional partitions are exactly fair") {
  Rng rng(14);
  const std::vector<int> residual{0, 2, 4};
  const auto part = Partition::from_blocks({{0, 1}, {2, 3}, {4, 5}}, 6);
  for (int beta = 1; beta <= 3; ++beta)
    for (int rep = 0; rep < 50; ++rep) {
      MatchingState ms;
      ms.groups.push_back(init_group_matching(6, 6 * beta + 3, residual, 0, rng));
      CHECK(delta_fairness({6, 6 * beta + 3}, assignments_from(part, ms)) == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("grouped dataset puts the smallest group first") {
  FeatureMatrix big = FeatureMatrix::Zero(5, 2), small = FeatureMatrix::Ones(3, 2);
  GroupedDataset data({big, small}, FeatureKind::continuous, {"big", "small"});
  CHECK(data.size(0) == 3);
  CHECK(data.relabel_map() == std::vector<int>{1, 0});
  CHECK(data.group_names()[0] == "small");
  CHECK(data.pooled().rows() == 8);
  CHECK_THROWS_AS(GroupedDataset({big}, FeatureKind::continuous), InvalidData);
  CHECK_THROWS_AS(GroupedDataset({big, FeatureMatrix::Zero(2, 3)}, FeatureKind::continuous), DimensionError);
  CHECK_THROWS_AS(GroupedDataset({big, FeatureMatrix::Constant(2, 2, 0.5)}, FeatureKind::binary), InvalidData);
}

TEST_CASE("canonical labels follow first appearance") {
  const auto a = canonicalize(Assignment{{{3, 3, 7}, {7, 2}}, 7});
  CHECK(a.labels[0] == std::vector<int>{1, 1, 2});
  CHECK(a.labels[1] == std::vector<int>{2, 3});
  CHECK(a.num_clusters == 3);
}

TEST_CASE("matching digest tracks T, T0 and E") {
  MatchingState a;
  a.groups.push_back(permutation_matching({0, 1, 2}));
  auto b = a;
  CHECK(matching_digest(a) == matching_digest(b));
  b.groups[0].T = {1, 0, 2};
  CHECK(matching_digest(a) != matching_digest(b));
  auto c = a;
  c.groups[0].T0[2] = 1;
  CHECK(matching_digest(a) != matching_digest(c));
}

TEST_CASE("feature distance is Euclidean or Hamming") {
  Eigen::RowVector3d x(0, 1, 1), y(1, 1, 0);
  CHECK(feature_distance(x, y, FeatureKind::binary) == 2.0);
  CHECK(feature_distance(x, y, FeatureKind::continuous) == doctest::Approx(std::sqrt(2.0)));
}
