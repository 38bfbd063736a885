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

// Multi-view data: synthetic generation, client partitioning, view
// assignment and the MVD1 binary format.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "efdmvc/error.hpp"
#include "efdmvc/random.hpp"
#include "efdmvc/tensor.hpp"

namespace efdmvc {

struct MultiViewDataset {
  std::vector<Matrix> views;  // view v is N x D_v
  std::optional<std::vector<std::size_t>> labels;
  std::size_t clusters = 0;

  std::size_t num_views() const { return views.size(); }
  std::size_t num_samples() const { return views.empty() ? 0 : views.front().rows(); }
  std::vector<std::size_t> view_dims() const {
    std::vector<std::size_t> d;
    for (const auto& v : views) d.push_back(v.cols());
    return d;
  }

  void validate() const {
    if (views.empty()) throw FormatError("dataset has no views");
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (views[v].rows() != num_samples()) {
        throw FormatError("view " + std::to_string(v) + " has " + std::to_string(views[v].rows()) +
                          " rows, expected " + std::to_string(num_samples()));
      }
    }
    if (labels) {
      if (labels->size() != num_samples()) throw FormatError("label count != sample count");
      for (std::size_t l : *labels) {
        if (l >= clusters) {
          throw FormatError("label " + std::to_string(l) + " outside [0," + std::to_string(clusters) + ")");
        }
      }
    }
  }

  bool operator==(const MultiViewDataset&) const = default;
};

enum class ClientType { full, partial, single };

inline const char* to_string(ClientType t) {
  switch (t) {
    case ClientType::full: return "full";
    case ClientType::partial: return "partial";
    case ClientType::single: return "single";
  }
  return "?";
}

inline ClientType client_type_for(std::size_t subset_size, std::size_t num_views) {
  if (subset_size == num_views) return ClientType::full;
  if (subset_size == 1) return ClientType::single;
  return ClientType::partial;
}

struct ClientShard {
  std::size_t client_id = 0;
  ClientType type = ClientType::full;
  std::vector<std::size_t> views;    // sorted, nonempty
  std::vector<std::size_t> samples;  // indices into the dataset

  void validate(std::size_t num_views) const {
    if (views.empty()) throw ConfigError("client " + std::to_string(client_id) + ": empty view subset");
    if (client_type_for(views.size(), num_views) != type) {
      throw ConfigError("client " + std::to_string(client_id) + ": type " + to_string(type) +
                        " inconsistent with " + std::to_string(views.size()) + " views");
    }
    if (samples.empty()) throw ConfigError("client " + std::to_string(client_id) + ": no samples");
    std::set<std::size_t> seen(samples.begin(), samples.end());
    if (seen.size() != samples.size()) {
      throw ConfigError("client " + std::to_string(client_id) + ": duplicate sample indices");
    }
  }
};

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

struct BlobSpec {
  std::size_t clusters = 3;
  std::size_t samples = 600;
  std::vector<std::size_t> view_dims{10, 10, 10};
  double separation = 6.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

// K isotropic Gaussian clusters per view. Each view draws its own cluster
// means, mean_k = separation * g_k / sqrt(D_v) with g_k ~ N(0, I), so the
// expected distance between two means is about separation * sqrt(2)
// regardless of D_v. Labels are balanced (sizes differ by at most one).
inline MultiViewDataset generate_blobs(const BlobSpec& spec) {
  if (spec.clusters < 1) throw ConfigError("generate_blobs: clusters must be >= 1");
  if (spec.samples < spec.clusters) {
    throw ConfigError("generate_blobs: samples (" + std::to_string(spec.samples) +
                      ") < clusters (" + std::to_string(spec.clusters) + ")");
  }
  if (spec.view_dims.empty()) throw ConfigError("generate_blobs: need at least one view");
  for (std::size_t d : spec.view_dims) {
    if (d < 1) throw ConfigError("generate_blobs: view dims must be >= 1");
  }
  if (spec.noise_sigma < 0.0 || spec.separation < 0.0) {
    throw ConfigError("generate_blobs: separation and noise_sigma must be >= 0");
  }

  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::size_t> labels(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) labels[i] = i % spec.clusters;
  std::shuffle(labels.begin(), labels.end(), rng);

  MultiViewDataset ds;
  ds.clusters = spec.clusters;
  for (std::size_t dim : spec.view_dims) {
    Matrix means(spec.clusters, dim);
    const double s = spec.separation / std::sqrt(static_cast<double>(dim));
    for (double& m : means.data()) m = s * gauss(rng);
    Matrix x(spec.samples, dim);
    for (std::size_t i = 0; i < spec.samples; ++i)
      for (std::size_t j = 0; j < dim; ++j) x(i, j) = means(labels[i], j) + spec.noise_sigma * gauss(rng);
    ds.views.push_back(std::move(x));
  }
  ds.labels = std::move(labels);
  return ds;
}

// Per-column z-scoring of every view; constant columns are only centered.
inline void standardize(MultiViewDataset& ds) {
  for (auto& x : ds.views) {
    const double n = static_cast<double>(x.rows());
    if (x.rows() == 0) continue;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
      mean /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      const double sd = std::sqrt(var / n);
      for (std::size_t i = 0; i < x.rows(); ++i) x(i, j) = sd > 0.0 ? (x(i, j) - mean) / sd : x(i, j) - mean;
    }
  }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

inline constexpr int kPartitionRetries = 10000;

// Splits sample indices across `clients`. With a concentration `beta`,
// each label's samples are divided by proportions p ~ Dirichlet(beta * 1_C);
// with std::nullopt the split is a uniform shuffle (IID). Proportions are
// redrawn until every client holds at least one sample.
inline std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const std::size_t> labels,
                                                                 std::size_t clients,
                                                                 std::optional<double> beta,
                                                                 std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (clients < 1) throw ConfigError("dirichlet_partition: client count must be >= 1");
  if (beta && !(*beta > 0.0)) throw ConfigError("dirichlet_partition: beta must be > 0");
  auto fail = [&] {
    std::ostringstream os;
    os << "dirichlet_partition: could not give every client a sample (beta="
       << (beta ? std::to_string(*beta) : std::string("iid")) << ", C=" << clients << ", N=" << n << ")";
    return PartitionError(os.str());
  };
  if (n < clients) throw fail();

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> parts(clients);

  if (!beta) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n; ++i) parts[i % clients].push_back(idx[i]);
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return parts;
  }

  std::size_t num_labels = 0;
  for (std::size_t l : labels) num_labels = std::max(num_labels, l + 1);
  std::vector<std::vector<std::size_t>> by_label(num_labels);
  for (std::size_t i = 0; i < n; ++i) by_label[labels[i]].push_back(i);
  for (auto& members : by_label) std::shuffle(members.begin(), members.end(), rng);

  std::gamma_distribution<double> gamma(*beta, 1.0);
  std::vector<std::vector<std::size_t>> cuts(num_labels, std::vector<std::size_t>(clients + 1));
  bool ok = false;
  for (int attempt = 0; attempt < kPartitionRetries && !ok; ++attempt) {
    std::vector<std::size_t> per_client(clients, 0);
    for (std::size_t k = 0; k < num_labels; ++k) {
      const std::size_t nk = by_label[k].size();
      std::vector<double> p(clients);
      double total = 0.0;
      for (double& x : p) total += x = gamma(rng);
      if (!(total > 0.0)) {
        // Every gamma draw underflowed; fall back to an even split for this label.
        std::fill(p.begin(), p.end(), 1.0);
        total = static_cast<double>(clients);
      }
      double acc = 0.0;
      cuts[k][0] = 0;
      for (std::size_t c = 0; c < clients; ++c) {
        acc += p[c] / total;
        cuts[k][c + 1] = c + 1 == clients
                             ? nk
                             : std::min(nk, static_cast<std::size_t>(std::floor(acc * static_cast<double>(nk))));
        cuts[k][c + 1] = std::max(cuts[k][c + 1], cuts[k][c]);
        per_client[c] += cuts[k][c + 1] - cuts[k][c];
      }
    }
    ok = std::all_of(per_client.begin(), per_client.end(), [](std::size_t c) { return c > 0; });
  }
  if (!ok) throw fail();

  for (std::size_t k = 0; k < num_labels; ++k)
    for (std::size_t c = 0; c < clients; ++c)
      for (std::size_t i = cuts[k][c]; i < cuts[k][c + 1]; ++i) parts[c].push_back(by_label[k][i]);
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

// ---------------------------------------------------------------------------
// View assignment
// ---------------------------------------------------------------------------

enum class ViewScenario { full_only, single_only, mixed };

// Fixed counts of client types for the mixed scenario.
struct ClientMix {
  std::size_t full = 0;
  std::size_t partial = 0;
  std::size_t single = 0;
  std::size_t total() const { return full + partial + single; }
  bool operator==(const ClientMix&) const = default;
};

struct ViewAssignment {
  ClientType type = ClientType::full;
  std::vector<std::size_t> views;
};

inline constexpr int kViewAssignRetries = 1000;

// Draws one view subset per client. In mixed mode the subset size is
// uniform on {1..V} unless `mix` pins the number of each client type.
// Every view is covered by at least one client whenever that is possible.
inline std::vector<ViewAssignment> assign_views(std::size_t clients, std::size_t num_views,
                                                ViewScenario scenario, std::uint64_t seed,
                                                std::optional<ClientMix> mix = std::nullopt) {
  if (clients < 1) throw ConfigError("assign_views: client count must be >= 1");
  if (num_views < 1) throw ConfigError("assign_views: need at least one view");
  if (scenario == ViewScenario::mixed && num_views < 2) {
    throw ConfigError("assign_views: mixed scenario needs V >= 2");
  }
  if (mix) {
    if (scenario != ViewScenario::mixed) throw ConfigError("assign_views: client_mix requires the mixed scenario");
    if (mix->total() != clients) {
      throw ConfigError("assign_views: client_mix sums to " + std::to_string(mix->total()) + ", expected " +
                        std::to_string(clients));
    }
    if (mix->partial > 0 && num_views < 3) throw ConfigError("assign_views: partial clients need V >= 3");
  }

  std::vector<ViewAssignment> out(clients);
  if (scenario == ViewScenario::full_only) {
    std::vector<std::size_t> all(num_views);
    std::iota(all.begin(), all.end(), 0);
    for (auto& a : out) a = {ClientType::full, all};
    return out;
  }

  // Coverage is achievable iff the subset sizes can reach all views.
  const bool single_cap = scenario == ViewScenario::single_only || (mix && mix->full == 0 && mix->partial == 0);
  if (single_cap && clients < num_views) {
    throw ConfigError("assign_views: " + std::to_string(clients) + " single-view clients cannot cover " +
                      std::to_string(num_views) + " views");
  }

  Rng rng(seed);
  std::vector<std::size_t> pool(num_views);
  std::iota(pool.begin(), pool.end(), 0);

  for (int attempt = 0; attempt < kViewAssignRetries; ++attempt) {
    std::vector<std::size_t> sizes(clients);
    if (scenario == ViewScenario::single_only) {
      std::fill(sizes.begin(), sizes.end(), 1);
    } else if (mix) {
      std::size_t i = 0;
      std::uniform_int_distribution<std::size_t> partial_size(2, num_views - 1);
      for (std::size_t k = 0; k < mix->full; ++k) sizes[i++] = num_views;
      for (std::size_t k = 0; k < mix->partial; ++k) sizes[i++] = partial_size(rng);
      for (std::size_t k = 0; k < mix->single; ++k) sizes[i++] = 1;
      std::shuffle(sizes.begin(), sizes.end(), rng);
    } else {
      std::uniform_int_distribution<std::size_t> size_dist(1, num_views);
      for (auto& s : sizes) s = size_dist(rng);
    }
    std::vector<bool> covered(num_views, false);
    for (std::size_t c = 0; c < clients; ++c) {
      std::shuffle(pool.begin(), pool.end(), rng);
      std::vector<std::size_t> subset(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(sizes[c]));
      std::sort(subset.begin(), subset.end());
      for (std::size_t v : subset) covered[v] = true;
      out[c] = {client_type_for(subset.size(), num_views), std::move(subset)};
    }
    if (std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) return out;
  }
  throw ConfigError("assign_views: could not cover all " + std::to_string(num_views) + " views with " +
                    std::to_string(clients) + " clients");
}

// ---------------------------------------------------------------------------
// MVD1 binary format (little-endian)
//   "MVD1" u32 version=1 u32 V u64 N u32 K u8 has_labels
//   per view: u32 D_v, N*D_v f64 row-major
//   if has_labels: N i64
// ---------------------------------------------------------------------------

namespace io {

static_assert(sizeof(double) == 8);

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

template <typename T>
T take(std::istream& is, const std::string& what) {
  T v{};
  if (!get(is, v)) throw FormatError("truncated payload while reading " + what);
  return v;
}

}  // namespace io

inline constexpr char kDatasetMagic[4] = {'M', 'V', 'D', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(std::ostream& os, const MultiViewDataset& ds) {
  ds.validate();
  os.write(kDatasetMagic, 4);
  io::put<std::uint32_t>(os, kDatasetVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_views()));
  io::put<std::uint64_t>(os, ds.num_samples());
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.clusters));
  io::put<std::uint8_t>(os, ds.labels ? 1 : 0);
  for (const auto& x : ds.views) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(x.cols()));
    for (double v : x.data()) io::put<double>(os, v);
  }
  if (ds.labels) {
    for (std::size_t l : *ds.labels) io::put<std::int64_t>(os, static_cast<std::int64_t>(l));
  }
}

inline MultiViewDataset read_dataset(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw FormatError("bad magic: not an MVD1 dataset");
  }
  const auto version = io::take<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) throw FormatError("unsupported MVD1 version " + std::to_string(version));
  const auto v_count = io::take<std::uint32_t>(is, "view count");
  const auto n = io::take<std::uint64_t>(is, "sample count");
  const auto k = io::take<std::uint32_t>(is, "cluster count");
  const auto has_labels = io::take<std::uint8_t>(is, "label flag");

  MultiViewDataset ds;
  ds.clusters = k;
  for (std::uint32_t v = 0; v < v_count; ++v) {
    const auto dim = io::take<std::uint32_t>(is, "view " + std::to_string(v) + " dimension");
    Matrix x(n, dim);
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!io::get(is, data[i])) {
        throw FormatError("view " + std::to_string(v) + ": payload has " + std::to_string(i / std::max<std::size_t>(dim, 1)) +
                          " complete rows, header declares N=" + std::to_string(n));
      }
    }
    ds.views.push_back(std::move(x));
  }
  if (has_labels) {
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) {
      const auto raw = io::take<std::int64_t>(is, "labels");
      if (raw < 0) throw FormatError("negative label " + std::to_string(raw));
      l = static_cast<std::size_t>(raw);
    }
    ds.labels = std::move(labels);
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const MultiViewDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_dataset(os, ds);
  if (!os) throw FormatError("write failed: " + path);
}

inline MultiViewDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("dataset path does not exist or is unreadable: " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// CSV import: one numeric file per view (rows = samples, comma separated,
// no header) plus an optional single-column integer labels file.
// ---------------------------------------------------------------------------

namespace io {

inline std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open CSV file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace io

inline MultiViewDataset load_csv_dataset(const std::vector<std::string>& view_paths,
                                         const std::optional<std::string>& labels_path) {
  if (view_paths.empty()) throw ConfigError("CSV import needs at least one view file");
  MultiViewDataset ds;
  for (std::size_t v = 0; v < view_paths.size(); ++v) {
    auto rows = io::read_csv_rows(view_paths[v]);
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Matrix x(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), x.row(i).begin());
    if (v > 0 && x.rows() != ds.views.front().rows()) {
      throw FormatError("view " + std::to_string(v) + " (" + view_paths[v] + ") has " + std::to_string(x.rows()) +
                        " rows, view 0 has " + std::to_string(ds.views.front().rows()));
    }
    ds.views.push_back(std::move(x));
  }
  if (labels_path) {
    auto rows = io::read_csv_rows(*labels_path);
    std::vector<std::size_t> labels;
    std::size_t k = 0;
    for (const auto& r : rows) {
      if (r.size() != 1 || r[0] < 0 || r[0] != std::floor(r[0])) {
        throw FormatError(*labels_path + ": labels must be one non-negative integer per row");
      }
      labels.push_back(static_cast<std::size_t>(r[0]));
      k = std::max(k, labels.back() + 1);
    }
    ds.labels = std::move(labels);
    ds.clusters = k;
  }
  ds.validate();
  return ds;
}

}  // namespace efdmvc
