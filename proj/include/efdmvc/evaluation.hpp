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

// Server-side clustering of the common semantics and the clustering
// metrics (ACC under optimal matching, NMI, ARI).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "efdmvc/dataset.hpp"
#include "efdmvc/error.hpp"
#include "efdmvc/model.hpp"
#include "efdmvc/random.hpp"
#include "efdmvc/tensor.hpp"

namespace efdmvc {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// argmin_j ||x_i - U_j||^2, ties to the lowest j.
inline std::vector<std::size_t> predict(const Matrix& x, const Matrix& centroids) {
  if (x.cols() != centroids.cols()) {
    throw DimensionError("predict: feature width " + std::to_string(x.cols()) + " vs centroid width " +
                         std::to_string(centroids.cols()));
  }
  std::vector<std::size_t> labels(x.rows(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.rows(); ++j) {
      const double d = squared_distance(x.row(i), centroids.row(j));
      if (d < best) {
        best = d;
        labels[i] = j;
      }
    }
  }
  return labels;
}

inline double kmeans_objective(const Matrix& x, const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.rows(); ++j) best = std::min(best, squared_distance(x.row(i), centroids.row(j)));
    total += best;
  }
  return total;
}

struct KMeansOptions {
  std::size_t max_iter = 300;
  double tol = 1e-6;
  std::size_t restarts = 10;
};

struct KMeansResult {
  Matrix centroids;  // K x h
  std::vector<std::size_t> labels;
  double objective = 0.0;
  std::vector<double> history;  // objective after each assignment step
  std::size_t iterations = 0;
};

namespace detail {

inline Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix c(k, x.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::copy(x.row(first).begin(), x.row(first).end(), c.row(0).begin());
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = squared_distance(x.row(i), c.row(0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t j = 1; j < k; ++j) {
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    std::size_t chosen = n - 1;
    if (total > 0.0) {
      double r = u(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= dist[i];
        if (r < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    std::copy(x.row(chosen).begin(), x.row(chosen).end(), c.row(j).begin());
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], squared_distance(x.row(i), c.row(j)));
  }
  return c;
}

}  // namespace detail

// Lloyd iterations from a k-means++ start. Empty clusters take the point
// farthest from its current centroid.
inline KMeansResult kmeans_single(const Matrix& x, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  const std::size_t n = x.rows();
  if (k < 1) throw ConfigError("kmeans: K must be >= 1");
  if (n < k) throw ConfigError("kmeans: N (" + std::to_string(n) + ") < K (" + std::to_string(k) + ")");
  Rng rng(seed);
  KMeansResult res;
  res.centroids = detail::kmeans_plus_plus(x, k, rng);
  res.labels = predict(x, res.centroids);

  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    res.history.push_back(kmeans_objective(x, res.centroids));
    res.iterations = it + 1;

    Matrix next(k, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.labels[i]];
      auto dst = next.row(res.labels[i]);
      auto src = x.row(i);
      for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += src[c];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (double& v : next.row(j)) v /= static_cast<double>(counts[j]);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.labels[i]] <= 1) continue;
        const double d = squared_distance(x.row(i), next.row(res.labels[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[res.labels[far]];
      res.labels[far] = j;
      counts[j] = 1;
      std::copy(x.row(far).begin(), x.row(far).end(), next.row(j).begin());
    }

    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) shift = std::max(shift, squared_distance(next.row(j), res.centroids.row(j)));
    res.centroids = std::move(next);
    res.labels = predict(x, res.centroids);
    if (std::sqrt(shift) < opt.tol) break;
  }
  res.objective = kmeans_objective(x, res.centroids);
  res.history.push_back(res.objective);
  return res;
}

// Best objective over `restarts` seeded runs; ties keep the lowest restart.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  const std::size_t restarts = std::max<std::size_t>(opt.restarts, 1);
  std::optional<KMeansResult> best;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansResult res = kmeans_single(x, k, mix_seed(seed, r), opt);
    if (!best || res.objective < best->objective) best = std::move(res);
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void check_labelings(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) {
    throw UsageError("metrics: label lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

struct Contingency {
  std::vector<std::vector<double>> table;  // rows: truth, cols: prediction
  std::vector<double> row_sums;
  std::vector<double> col_sums;
  double n = 0.0;
};

inline Contingency contingency(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  check_labelings(truth, pred);
  std::size_t kt = 0, kp = 0;
  for (std::size_t t : truth) kt = std::max(kt, t + 1);
  for (std::size_t p : pred) kp = std::max(kp, p + 1);
  Contingency c;
  c.table.assign(kt, std::vector<double>(kp, 0.0));
  c.row_sums.assign(kt, 0.0);
  c.col_sums.assign(kp, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    c.table[truth[i]][pred[i]] += 1.0;
    c.row_sums[truth[i]] += 1.0;
    c.col_sums[pred[i]] += 1.0;
  }
  c.n = static_cast<double>(truth.size());
  return c;
}

}  // namespace detail

// Minimum-cost perfect assignment on a square cost matrix (Hungarian
// method with potentials, O(n^3)). Returns assignment[row] = col.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

// Fraction of samples matched under the best one-to-one relabeling.
inline double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  auto c = detail::contingency(truth, pred);
  if (c.n == 0.0) return 0.0;
  const std::size_t k = std::max(c.row_sums.size(), c.col_sums.size());
  std::vector<std::vector<double>> cost(k, std::vector<double>(k, 0.0));
  for (std::size_t t = 0; t < c.row_sums.size(); ++t)
    for (std::size_t p = 0; p < c.col_sums.size(); ++p) cost[t][p] = -c.table[t][p];
  auto match = hungarian(cost);
  double hits = 0.0;
  for (std::size_t t = 0; t < k; ++t) hits -= cost[t][match[t]];
  return hits / c.n;
}

// I(T;P) / sqrt(H(T) H(P)). Both single-cluster -> 1; one side constant -> 0.
inline double nmi(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  auto c = detail::contingency(truth, pred);
  if (c.n == 0.0) return 0.0;
  auto entropy = [&](const std::vector<double>& sums) {
    double h = 0.0;
    for (double s : sums)
      if (s > 0.0) h -= (s / c.n) * std::log(s / c.n);
    return h;
  };
  const double ht = entropy(c.row_sums);
  const double hp = entropy(c.col_sums);
  if (ht == 0.0 && hp == 0.0) return 1.0;
  if (ht == 0.0 || hp == 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t t = 0; t < c.row_sums.size(); ++t)
    for (std::size_t p = 0; p < c.col_sums.size(); ++p) {
      const double nij = c.table[t][p];
      if (nij > 0.0) mi += (nij / c.n) * std::log(c.n * nij / (c.row_sums[t] * c.col_sums[p]));
    }
  return std::clamp(mi / std::sqrt(ht * hp), 0.0, 1.0);
}

// Adjusted Rand index from pair counts of the contingency table.
inline double ari(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  auto c = detail::contingency(truth, pred);
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, a = 0.0, b = 0.0;
  for (const auto& row : c.table)
    for (double nij : row) index += choose2(nij);
  for (double s : c.row_sums) a += choose2(s);
  for (double s : c.col_sums) b += choose2(s);
  const double total = choose2(c.n);
  if (total == 0.0) return 1.0;
  const double expected = a * b / total;
  const double max_index = 0.5 * (a + b);
  if (max_index == expected) return 1.0;  // both labelings trivial in the same way
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Global evaluation
// ---------------------------------------------------------------------------

struct Metrics {
  std::optional<double> acc;
  std::optional<double> nmi;
  std::optional<double> ari;
  double kmeans_objective = 0.0;
};

struct EvalOptions {
  std::vector<std::size_t> views;  // empty = every view of the dataset
  KMeansOptions kmeans;
  std::uint64_t seed = 0;
};

// Common semantics of every sample under `params`, using the requested views.
inline Matrix pooled_semantics(const ModelParams& params, const MultiViewDataset& ds, std::span<const std::size_t> views) {
  std::vector<std::size_t> use(views.begin(), views.end());
  if (use.empty()) {
    use.resize(ds.num_views());
    std::iota(use.begin(), use.end(), 0);
  }
  std::vector<Matrix> inputs;
  for (std::size_t v : use) {
    if (v >= ds.num_views()) throw ConfigError("eval view " + std::to_string(v) + " not in dataset");
    inputs.push_back(ds.views[v]);
  }
  return common_semantics(params, inputs, use);
}

// k-means with restarts on the pooled H; metrics only when labels exist.
inline Metrics evaluate_global(const ModelParams& params, const MultiViewDataset& ds, const EvalOptions& opt) {
  const Matrix h = pooled_semantics(params, ds, opt.views);
  const std::size_t k = ds.clusters > 0 ? ds.clusters : params.arch.clusters;
  KMeansResult km = kmeans(h, k, opt.seed, opt.kmeans);
  Metrics m;
  m.kmeans_objective = km.objective;
  if (ds.labels) {
    m.acc = accuracy(*ds.labels, km.labels);
    m.nmi = nmi(*ds.labels, km.labels);
    m.ari = ari(*ds.labels, km.labels);
  }
  return m;
}

}  // namespace efdmvc
