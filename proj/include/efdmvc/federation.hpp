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

// In-process federation: clients train on their own shard and expose only
// parameters; the server weights clients by sample count and view coverage
// and averages each view's autoencoder over the clients that own it.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "efdmvc/dataset.hpp"
#include "efdmvc/error.hpp"
#include "efdmvc/losses.hpp"
#include "efdmvc/model.hpp"
#include "efdmvc/random.hpp"
#include "efdmvc/tensor.hpp"

namespace efdmvc {

// How view coverage |V_c|/V turns into the client factor alpha_c.
enum class CoverageWeight { linear, quadratic, binary };
enum class AggregationMode { balanced, fedavg };

struct FederationConfig {
  std::uint64_t seed = 0;
  std::size_t clients = 6;
  ViewScenario scenario = ViewScenario::mixed;
  std::optional<ClientMix> client_mix;
  std::optional<double> dirichlet_beta = 10.0;  // nullopt = IID split
  std::size_t rounds = 30;
  std::size_t warmup_epochs = 20;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  LossConfig loss;
  CoverageWeight coverage = CoverageWeight::linear;
  AggregationMode aggregation = AggregationMode::balanced;
  bool use_contrast = true;
  bool use_drift = true;
  std::size_t threads = 1;
  // view_dims and clusters are taken from the dataset.
  Architecture arch;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct ClientState {
  ClientShard shard;
  std::vector<Matrix> data;  // one matrix per owned view, rows = shard samples
  ModelParams params;
  ModelParams frozen_prev;  // params as they stood when the last round ended
  Rng rng;
  Optimizer optimizer;
  bool has_global = false;

  std::size_t num_samples() const { return shard.samples.size(); }
};

// Copies the shard's rows of its owned views out of the dataset.
inline ClientState make_client(const MultiViewDataset& ds, ClientShard shard, const FederationConfig& cfg) {
  shard.validate(ds.num_views());
  ClientState c;
  for (std::size_t v : shard.views) c.data.push_back(ds.views.at(v).gather_rows(shard.samples));
  c.rng.seed(derive_seed(cfg.seed, SeedStream::client, shard.client_id));
  c.optimizer = Optimizer(cfg.optimizer, cfg.lr);
  c.shard = std::move(shard);
  return c;
}

struct ClientLosses {
  std::size_t client_id = 0;
  ClientType type = ClientType::full;
  std::map<std::string, double> mean;  // component name -> mean over batches
};

namespace detail {

// Shuffled mini-batches; a trailing batch of one sample is merged into the
// previous batch so contrastive terms always see negatives when N >= 2.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t b = std::max<std::size_t>(batch_size, 1);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + b)));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

inline void require_finite(double v, const ClientState& c, const char* what) {
  if (!std::isfinite(v)) {
    throw TrainingError("client " + std::to_string(c.shard.client_id) + ": non-finite " + what + " loss");
  }
}

struct LossAccumulator {
  std::map<std::string, double> sum;
  std::size_t batches = 0;
  void add(const std::string& k, double v) { sum[k] += v; }
  std::map<std::string, double> mean() const {
    std::map<std::string, double> m;
    for (const auto& [k, v] : sum) m[k] = batches ? v / static_cast<double>(batches) : 0.0;
    return m;
  }
};

}  // namespace detail

// Warm-up: minimizes reconstruction only, over the client's own autoencoders.
// Uses a fresh optimizer; the client's round optimizer is left untouched.
inline ClientLosses pretrain_client(ClientState& client, std::size_t epochs, double lr, std::size_t batch_size = 64,
                                    OptimizerKind kind = OptimizerKind::adam) {
  ClientLosses report{client.shard.client_id, client.shard.type, {}};
  detail::LossAccumulator acc;
  std::vector<Param*> params;
  for (std::size_t v : client.shard.views) {
    auto p = client.params.view_params(v);
    params.insert(params.end(), p.begin(), p.end());
  }
  Optimizer opt(kind, lr);
  const Activation act = client.params.arch.activation;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& batch : detail::make_batches(client.num_samples(), batch_size, client.rng)) {
      Tape t;
      std::vector<Var> x, recon;
      for (std::size_t i = 0; i < client.shard.views.size(); ++i) {
        const std::size_t v = client.shard.views[i];
        x.push_back(t.constant(client.data[i].gather_rows(batch)));
        Var z = apply_mlp(t, client.params.encoders[v], x.back(), act, Binding::trainable);
        recon.push_back(apply_mlp(t, client.params.decoders[v], z, act, Binding::trainable));
      }
      Var loss = reconstruction_loss(x, recon);
      detail::require_finite(loss.value().item(), client, "reconstruction");
      acc.add("reconstruction", loss.value().item());
      ++acc.batches;
      t.backward(loss);
      opt.step(params);
    }
  }
  client.frozen_prev = client.params;
  report.mean = acc.mean();
  return report;
}

// Reference features a client contrasts against: computed by a model that
// receives no gradient.
inline Var reference_semantics(Tape& t, const ModelParams& model, std::span<const Var> inputs,
                               std::span<const std::size_t> views) {
  std::vector<Matrix> values;
  for (const Var& x : inputs) values.push_back(x.value());
  return t.constant(common_semantics(model, values, views));
}

// One round of local optimization of the client's total objective.
// `global` is the model broadcast for this round (G^(r-1)); `round` >= 1.
// Drift is skipped in round 1, where no trained global/frozen pair exists.
inline ClientLosses local_train_round(ClientState& client, const ModelParams& global, const FederationConfig& cfg,
                                      std::size_t round) {
  if (!client.has_global) {
    throw UsageError("client " + std::to_string(client.shard.client_id) + ": round run before any broadcast");
  }
  if (round < 1) throw UsageError("local_train_round: rounds are numbered from 1");
  if (!same_layout(global, client.params)) throw DimensionError("local_train_round: global model layout differs");

  const auto& views = client.shard.views;
  const ClientType type = client.shard.type;
  const LossConfig& lc = cfg.loss;
  const bool drift_on = cfg.use_drift && round > 1;
  const bool need_q = cfg.use_contrast && type == ClientType::full;
  std::vector<Param*> trainable = client.params.trainable_params(views);
  std::normal_distribution<double> noise(0.0, 1.0);

  ClientLosses report{client.shard.client_id, type, {}};
  detail::LossAccumulator acc;

  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    for (const auto& batch : detail::make_batches(client.num_samples(), cfg.batch_size, client.rng)) {
      Tape t;
      std::vector<Var> x;
      for (std::size_t i = 0; i < views.size(); ++i) x.push_back(t.constant(client.data[i].gather_rows(batch)));
      ForwardOutputs out = forward(t, client.params, x, views, Binding::trainable, need_q, true);
      auto zero = [&t] { return t.constant(Matrix(1, 1, 0.0)); };

      LossComponents c;
      c.reconstruction = reconstruction_loss(x, out.recon);

      // Noisy view features for single-view clients (contrast negative and
      // drift negative).
      std::optional<Var> noisy;
      if (type == ClientType::single && (cfg.use_contrast || drift_on)) {
        Matrix xn = x.front().value();
        for (double& v : xn.data()) v += lc.sigma_noise * noise(client.rng);
        std::vector<Var> xn_in{t.constant(std::move(xn))};
        noisy = forward(t, client.params, xn_in, views, Binding::trainable, false, false).fused;
      }

      switch (type) {
        case ClientType::full:
          c.feature_contrast = cfg.use_contrast ? feature_contrast_full(out.h, lc.tau) : zero();
          c.label_contrast = cfg.use_contrast ? label_contrast(out.q, lc.tau) : zero();
          break;
        case ClientType::partial:
          c.partial_contrast =
              cfg.use_contrast && out.fused.rows() >= 2 ? partial_contrast(out.fused, out.h, lc.tau) : zero();
          break;
        case ClientType::single:
          c.single_contrast = cfg.use_contrast ? single_view_contrast(out.fused, out.h.front(), *noisy, lc.tau) : zero();
          break;
      }

      if (drift_on) {
        Var global_h = reference_semantics(t, global, x, views);
        Var positive, negative;
        switch (type) {
          case ClientType::full:
            positive = reference_semantics(t, client.frozen_prev, x, views);
            negative = global_h;
            break;
          case ClientType::partial:
            positive = global_h;
            negative = reference_semantics(t, client.frozen_prev, x, views);
            break;
          case ClientType::single:
            positive = global_h;
            negative = *noisy;
            break;
        }
        c.drift = drift_loss(out.fused, positive, negative, client.params, global, lc.tau, lc.mu, views);
      } else {
        c.drift = zero();
      }

      Var total = total_loss(type, c, lc.alpha);
      const double total_v = total.value().item();
      detail::require_finite(total_v, client, "total");
      acc.add("total", total_v);
      acc.add("reconstruction", c.reconstruction->value().item());
      acc.add("drift", c.drift->value().item());
      if (c.feature_contrast) acc.add("feature_contrast", c.feature_contrast->value().item());
      if (c.label_contrast) acc.add("label_contrast", c.label_contrast->value().item());
      if (c.partial_contrast) acc.add("partial_contrast", c.partial_contrast->value().item());
      if (c.single_contrast) acc.add("single_contrast", c.single_contrast->value().item());
      ++acc.batches;

      t.backward(total);
      client.optimizer.step(trainable);
    }
  }
  client.frozen_prev = client.params;
  report.mean = acc.mean();
  return report;
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct RegistryEntry {
  std::size_t client_id = 0;
  std::size_t samples = 0;          // n_c
  std::vector<std::size_t> views;   // V_c
};

struct ServerState {
  ModelParams global_params;
  std::size_t round = 0;
  std::size_t num_views = 0;
  std::vector<RegistryEntry> registry;  // ascending client id
};

inline double coverage_factor(std::size_t owned, std::size_t num_views, CoverageWeight mode) {
  const double frac = static_cast<double>(owned) / static_cast<double>(num_views);
  switch (mode) {
    case CoverageWeight::linear: return frac;
    case CoverageWeight::quadratic: return frac * frac;
    case CoverageWeight::binary: return owned == num_views ? 1.0 : 0.5;
  }
  return frac;
}

// w_c = alpha_c n_c / sum_i alpha_i n_i. FedAvg mode drops alpha_c.
inline std::vector<double> compute_weights(std::span<const RegistryEntry> registry, std::size_t num_views,
                                           CoverageWeight mode = CoverageWeight::linear,
                                           AggregationMode agg = AggregationMode::balanced) {
  if (registry.empty()) throw UsageError("compute_weights: empty registry");
  if (num_views == 0) throw UsageError("compute_weights: zero views");
  std::vector<double> w(registry.size());
  double total = 0.0;
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& e = registry[i];
    if (e.samples < 1) throw UsageError("compute_weights: client " + std::to_string(e.client_id) + " has no samples");
    if (e.views.empty() || e.views.size() > num_views) {
      throw UsageError("compute_weights: client " + std::to_string(e.client_id) + " has an invalid view count");
    }
    const double a = agg == AggregationMode::fedavg ? 1.0 : coverage_factor(e.views.size(), num_views, mode);
    total += w[i] = a * static_cast<double>(e.samples);
  }
  for (double& x : w) x /= total;
  return w;
}

// Shared networks: sum_c w_c w_c-params. View v's autoencoder: weighted mean
// over the clients owning v with their weights renormalized; a view nobody
// owns keeps the previous global values. Sums run in registry order.
inline ModelParams aggregate(const ServerState& server, std::span<const ModelParams* const> client_params,
                             std::span<const double> weights) {
  const auto& reg = server.registry;
  if (client_params.size() != reg.size() || weights.size() != reg.size()) {
    throw UsageError("aggregate: need one parameter set and weight per registered client");
  }
  for (const ModelParams* p : client_params) {
    if (!same_layout(*p, server.global_params)) throw DimensionError("aggregate: client layout differs from global");
  }

  ModelParams g = server.global_params;
  auto blend = [&](std::vector<Param*> dst, auto&& source_of, const std::vector<std::size_t>& members,
                   const std::vector<double>& w) {
    for (Param* p : dst) p->value.fill(0.0);
    for (std::size_t m = 0; m < members.size(); ++m) {
      auto src = source_of(*client_params[members[m]]);
      for (std::size_t k = 0; k < dst.size(); ++k) {
        auto d = dst[k]->value.data();
        auto s = src[k]->value.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += w[m] * s[i];
      }
    }
  };

  std::vector<std::size_t> everyone(reg.size());
  std::iota(everyone.begin(), everyone.end(), 0);
  blend(g.shared_params(), [](const ModelParams& p) { return p.shared_params(); }, everyone,
        std::vector<double>(weights.begin(), weights.end()));

  for (std::size_t v = 0; v < g.encoders.size(); ++v) {
    std::vector<std::size_t> owners;
    double mass = 0.0;
    for (std::size_t c = 0; c < reg.size(); ++c) {
      if (std::find(reg[c].views.begin(), reg[c].views.end(), v) != reg[c].views.end()) {
        owners.push_back(c);
        mass += weights[c];
      }
    }
    if (owners.empty() || !(mass > 0.0)) continue;
    std::vector<double> w;
    for (std::size_t c : owners) w.push_back(weights[c] / mass);
    blend(g.view_params(v), [v](const ModelParams& p) { return p.view_params(v); }, owners, w);
  }
  return g;
}

inline void broadcast(const ServerState& server, std::span<ClientState> clients) {
  for (auto& c : clients) {
    c.params = server.global_params;
    c.has_global = true;
  }
}

// ---------------------------------------------------------------------------
// Round loop
// ---------------------------------------------------------------------------

struct RoundReport {
  std::size_t round = 0;
  std::vector<ClientLosses> clients;
  std::vector<double> weights;
  double wall_seconds = 0.0;
};

struct FederationSetup {
  ServerState server;
  std::vector<ClientState> clients;
};

// Partitions the data, assigns views, initializes the global model and
// broadcasts it. Labels drive the Dirichlet split; unlabeled data is split
// as a single class.
inline FederationSetup setup_federation(const FederationConfig& cfg, const MultiViewDataset& ds) {
  ds.validate();
  cfg.loss.validate();
  if (cfg.clients < 1) throw ConfigError("clients must be >= 1");

  Architecture arch = cfg.arch;
  arch.view_dims = ds.view_dims();
  if (ds.clusters > 0) arch.clusters = ds.clusters;

  std::vector<std::size_t> labels = ds.labels ? *ds.labels : std::vector<std::size_t>(ds.num_samples(), 0);
  auto parts = dirichlet_partition(labels, cfg.clients, cfg.dirichlet_beta, derive_seed(cfg.seed, SeedStream::partition));
  auto assignment = assign_views(cfg.clients, ds.num_views(), cfg.scenario, derive_seed(cfg.seed, SeedStream::views),
                                 cfg.client_mix);

  FederationSetup s;
  s.server.global_params = init_params(arch, derive_seed(cfg.seed, SeedStream::init));
  s.server.num_views = ds.num_views();
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    ClientShard shard{c, assignment[c].type, assignment[c].views, parts[c]};
    s.server.registry.push_back({c, shard.samples.size(), shard.views});
    s.clients.push_back(make_client(ds, std::move(shard), cfg));
  }
  broadcast(s.server, s.clients);
  for (auto& c : s.clients) c.frozen_prev = c.params;
  return s;
}

namespace detail {

// Runs fn(i) for every client, on up to `threads` workers. Each client's
// work touches only that client, so results do not depend on scheduling.
template <typename Fn>
void for_each_client(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, count);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename Fn>
auto with_context(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw TrainingError(where + ": " + e.what());
  }
}

}  // namespace detail

struct FederationResult {
  ServerState server;
  std::vector<RoundReport> history;
  std::vector<ClientShard> shards;
  std::vector<ClientLosses> pretrain;
};

using RoundHook = std::function<void(const ServerState&, const RoundReport&)>;

// Resume point: a saved global model and the round it completed.
struct ResumeState {
  ModelParams global_params;
  std::size_t round = 0;
};

// Warm-up, then rounds of {local training, weights, aggregation, broadcast}.
inline FederationResult run_federation(const FederationConfig& cfg, const MultiViewDataset& ds,
                                       const RoundHook& hook = {}, const std::optional<ResumeState>& resume = {}) {
  FederationSetup s = setup_federation(cfg, ds);
  FederationResult result;
  for (const auto& c : s.clients) result.shards.push_back(c.shard);

  std::size_t first_round = 1;
  if (resume) {
    if (!same_layout(resume->global_params, s.server.global_params)) {
      throw ConfigError("resume checkpoint does not match the configured architecture");
    }
    s.server.global_params = resume->global_params;
    s.server.round = resume->round;
    first_round = resume->round + 1;
    broadcast(s.server, s.clients);
    for (auto& c : s.clients) c.frozen_prev = c.params;
  } else {
    result.pretrain.resize(s.clients.size());
    detail::for_each_client(s.clients.size(), cfg.threads, [&](std::size_t i) {
      result.pretrain[i] = detail::with_context("pretraining, client " + std::to_string(i), [&] {
        return pretrain_client(s.clients[i], cfg.warmup_epochs, cfg.lr, cfg.batch_size, cfg.optimizer);
      });
    });
  }

  for (std::size_t r = first_round; r <= cfg.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = r;
    report.clients.resize(s.clients.size());
    detail::for_each_client(s.clients.size(), cfg.threads, [&](std::size_t i) {
      report.clients[i] =
          detail::with_context("round " + std::to_string(r) + ", client " + std::to_string(i),
                               [&] { return local_train_round(s.clients[i], s.server.global_params, cfg, r); });
    });
    report.weights = compute_weights(s.server.registry, s.server.num_views, cfg.coverage, cfg.aggregation);
    std::vector<const ModelParams*> uploads;
    for (const auto& c : s.clients) uploads.push_back(&c.params);
    s.server.global_params = aggregate(s.server, uploads, report.weights);
    s.server.round = r;
    broadcast(s.server, s.clients);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hook) hook(s.server, report);
    result.history.push_back(std::move(report));
  }
  result.server = std::move(s.server);
  return result;
}

}  // namespace efdmvc
