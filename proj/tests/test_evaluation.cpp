/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace efdmvc;
using efdmvc::testing::random_matrix;
using efdmvc::testing::uniform_size;

namespace {

using Labels = std::vector<std::size_t>;

double brute_force_accuracy(const Labels& truth, const Labels& pred, std::size_t k) {
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += perm[pred[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(truth.size());
}

// ARI from its definition: classify every unordered pair of samples.
double pair_enumeration_ari(const Labels& t, const Labels& p) {
  double both = 0, only_t = 0, only_p = 0, neither = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      const bool st = t[i] == t[j], sp = p[i] == p[j];
      if (st && sp) ++both;
      else if (st) ++only_t;
      else if (sp) ++only_p;
      else ++neither;
    }
  const double total = both + only_t + only_p + neither;
  const double a = both + only_t, b = both + only_p;
  const double expected = a * b / total;
  return (both - expected) / (0.5 * (a + b) - expected);
}

Labels random_labels(std::size_t n, std::size_t k, Rng& rng) {
  Labels l(n);
  for (auto& x : l) x = uniform_size(rng, 0, k - 1);
  return l;
}

double exhaustive_two_means(const Matrix& x) {
  const std::size_t n = x.rows();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    Matrix c(2, x.cols());
    double cnt[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = (mask >> i) & 1;
      cnt[g] += 1;
      for (std::size_t d = 0; d < x.cols(); ++d) c(g, d) += x(i, d);
    }
    for (std::size_t g = 0; g < 2; ++g)
      for (std::size_t d = 0; d < x.cols(); ++d) c(g, d) /= cnt[g];
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += squared_distance(x.row(i), c.row((mask >> i) & 1));
    best = std::min(best, obj);
  }
  return best;
}

}  // namespace

TEST(Predict, NearestCentroidWithLowestIndexOnTies) {
  Matrix c{{0.0, 0.0}, {2.0, 0.0}, {0.0, 0.0}};
  Matrix x{{1.0, 0.0}, {1.9, 0.0}, {-1.0, 0.0}};
  EXPECT_EQ(predict(x, c), (Labels{0, 1, 0}));
  EXPECT_THROW(predict(Matrix(1, 3), c), DimensionError);
}

TEST(KMeans, ObjectiveNeverIncreases) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = uniform_size(rng, 5, 80), k = uniform_size(rng, 1, 6), d = uniform_size(rng, 1, 4);
    Matrix x = random_matrix(n, d, rng, -3, 3);
    auto res = kmeans_single(x, std::min(k, n), rng());
    for (std::size_t i = 1; i < res.history.size(); ++i) EXPECT_LE(res.history[i], res.history[i - 1] + 1e-12);
    EXPECT_DOUBLE_EQ(res.objective, res.history.back());
  }
}

TEST(KMeans, FixedPointIsPredictConsistent) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = random_matrix(40, 2, rng);
    auto res = kmeans(x, 3, rng());
    EXPECT_EQ(res.labels, predict(x, res.centroids));
    EXPECT_NEAR(res.objective, kmeans_objective(x, res.centroids), 1e-12);
  }
}

TEST(KMeans, RestartsReachExhaustiveOptimumOnEightPoints) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix x = random_matrix(8, 2, rng, -2, 2);
    EXPECT_NEAR(kmeans(x, 2, rng()).objective, exhaustive_two_means(x), 1e-9) << "trial " << trial;
  }
}

TEST(KMeans, KEqualsNGivesZeroObjective) {
  Rng rng(4);
  Matrix x = random_matrix(5, 3, rng);
  EXPECT_NEAR(kmeans(x, 5, 1).objective, 0.0, 1e-12);
}

TEST(KMeans, DuplicatePointsDoNotBreak) {
  Matrix x(6, 2, 1.0);
  auto res = kmeans(x, 3, 0);
  EXPECT_EQ(res.objective, 0.0);
  EXPECT_TRUE(res.centroids.all_finite());
}

TEST(KMeans, DeterministicPerSeedAndErrors) {
  Rng rng(5);
  Matrix x = random_matrix(30, 2, rng);
  EXPECT_EQ(kmeans(x, 3, 9).labels, kmeans(x, 3, 9).labels);
  EXPECT_THROW(kmeans(x, 0, 1), ConfigError);
  EXPECT_THROW(kmeans(Matrix(2, 2), 3, 1), ConfigError);
}

TEST(Hungarian, MatchesBruteForceOnRandomCosts) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = uniform_size(rng, 1, 6);
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (double& c : row) c = std::uniform_real_distribution<double>(-5, 5)(rng);
    auto a = hungarian(cost);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += cost[i][a[i]];
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i][perm[i]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(got, best, 1e-9);
  }
}

TEST(Accuracy, MatchesPermutationBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = uniform_size(rng, 1, 5), n = uniform_size(rng, 1, 50);
    Labels t = random_labels(n, k, rng), p = random_labels(n, k, rng);
    EXPECT_NEAR(accuracy(t, p), brute_force_accuracy(t, p, k), 1e-12);
  }
}

TEST(Accuracy, PermutationInvariantAndPerfectOnRelabeling) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = uniform_size(rng, 2, 6);
    Labels t = random_labels(60, k, rng), p = random_labels(60, k, rng);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Labels relabeled = t, p2 = p;
    for (auto& x : relabeled) x = perm[x];
    for (auto& x : p2) x = perm[x];
    EXPECT_DOUBLE_EQ(accuracy(t, relabeled), 1.0);
    EXPECT_DOUBLE_EQ(nmi(t, relabeled), 1.0);
    EXPECT_DOUBLE_EQ(ari(t, relabeled), 1.0);
    EXPECT_NEAR(accuracy(t, p), accuracy(t, p2), 1e-12);
    EXPECT_NEAR(accuracy(t, p), accuracy(relabeled, p), 1e-12);
  }
}

TEST(Accuracy, UnequalClusterCounts) {
  EXPECT_DOUBLE_EQ(accuracy(Labels{0, 0, 1, 1}, Labels{0, 1, 2, 3}), 0.5);
  EXPECT_DOUBLE_EQ(accuracy(Labels{0, 1, 2, 3}, Labels{0, 0, 0, 0}), 0.25);
}

TEST(Nmi, HandContingencies) {
  // [[2,0],[0,2]] vs [[1,1],[1,1]]
  EXPECT_NEAR(nmi(Labels{0, 0, 1, 1}, Labels{0, 0, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(nmi(Labels{0, 0, 1, 1}, Labels{0, 1, 0, 1}), 0.0, 1e-12);
  EXPECT_EQ(nmi(Labels{0, 1, 2, 0}, Labels{3, 3, 3, 3}), 0.0);
  EXPECT_EQ(nmi(Labels{1, 1, 1}, Labels{0, 0, 0}), 1.0);
}

TEST(Nmi, ClosedFormOnThreeByTwo) {
  // truth {0,0,1,1,2,2}, pred {0,0,0,1,1,1}: contingency [[2,0],[1,1],[0,2]],
  // H(T)=ln3, H(P)=ln2.
  const double n = 6;
  const double mi = (2 / n) * std::log(n * 2 / (2 * 3)) * 2 + (1 / n) * std::log(n * 1 / (2 * 3)) * 2;
  const double expected = mi / std::sqrt(std::log(3.0) * std::log(2.0));
  EXPECT_NEAR(nmi(Labels{0, 0, 1, 1, 2, 2}, Labels{0, 0, 0, 1, 1, 1}), expected, 1e-12);
}

TEST(Ari, MatchesPairEnumerationOnSixSamples) {
  Rng rng(9);
  const Labels t{0, 0, 1, 1, 2, 2}, p{0, 0, 0, 1, 1, 2};
  EXPECT_NEAR(ari(t, p), pair_enumeration_ari(t, p), 1e-12);
  for (int trial = 0; trial < 100; ++trial) {
    Labels a = random_labels(6, 3, rng), b = random_labels(6, 3, rng);
    const double ref = pair_enumeration_ari(a, b);
    if (std::isfinite(ref)) {
      EXPECT_NEAR(ari(a, b), ref, 1e-12);
    }
  }
}

TEST(Ari, ChanceLevelNearZero) {
  Rng rng(10);
  double sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) sum += ari(random_labels(1000, 10, rng), random_labels(1000, 10, rng));
  EXPECT_LT(std::abs(sum / 100.0), 0.05);
}

TEST(Metrics, RangesOnRandomLabelings) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = uniform_size(rng, 1, 6), n = uniform_size(rng, 2, 40);
    Labels t = random_labels(n, k, rng), p = random_labels(n, k, rng);
    const double a = accuracy(t, p), m = nmi(t, p), r = ari(t, p);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Metrics, LengthMismatchIsUsageError) {
  EXPECT_THROW(accuracy(Labels{0, 1}, Labels{0}), UsageError);
  EXPECT_THROW(nmi(Labels{0, 1}, Labels{0}), UsageError);
  EXPECT_THROW(ari(Labels{0, 1}, Labels{0}), UsageError);
}

TEST(EvaluateGlobal, UnlabeledReportsObjectiveOnly) {
  BlobSpec spec;
  spec.samples = 60;
  auto ds = generate_blobs(spec);
  Architecture a;
  a.view_dims = ds.view_dims();
  auto p = init_params(a, 1);
  EvalOptions eo;
  auto labeled = evaluate_global(p, ds, eo);
  EXPECT_TRUE(labeled.acc.has_value());
  ds.labels.reset();
  auto m = evaluate_global(p, ds, eo);
  EXPECT_FALSE(m.acc.has_value());
  EXPECT_FALSE(m.ari.has_value());
  EXPECT_DOUBLE_EQ(m.kmeans_objective, labeled.kmeans_objective);
  EXPECT_GT(m.kmeans_objective, 0.0);
}

TEST(EvaluateGlobal, DeterministicAndViewSubsets) {
  BlobSpec spec;
  spec.samples = 90;
  auto ds = generate_blobs(spec);
  Architecture a;
  a.view_dims = ds.view_dims();
  auto p = init_params(a, 1);
  EvalOptions eo;
  eo.seed = 4;
  auto m1 = evaluate_global(p, ds, eo);
  auto m2 = evaluate_global(p, ds, eo);
  EXPECT_EQ(*m1.acc, *m2.acc);
  EXPECT_EQ(m1.kmeans_objective, m2.kmeans_objective);
  eo.views = {1};
  auto sub = evaluate_global(p, ds, eo);
  std::vector<Matrix> only{ds.views[1]};
  std::vector<std::size_t> v1{1};
  EXPECT_DOUBLE_EQ(sub.kmeans_objective, kmeans(common_semantics(p, only, v1), 3, 4).objective);
  eo.views = {5};
  EXPECT_THROW(evaluate_global(p, ds, eo), ConfigError);
}
