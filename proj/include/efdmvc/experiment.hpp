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

// Experiment driver. A run writes four artifacts into its output directory:
//   metrics.csv      round,seed,acc,nmi,ari,kmeans_objective
//   summary.json     final metrics per seed, their mean and std, client layout
//   model.ckpt       global model (rewritten after every round)
//   config.resolved  every key with its effective value, key=value
// With repeats > 1 the checkpoint of seed S is model_seed<S>.ckpt.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "efdmvc/checkpoint.hpp"
#include "efdmvc/config.hpp"
#include "efdmvc/dataset.hpp"
#include "efdmvc/evaluation.hpp"
#include "efdmvc/federation.hpp"

namespace efdmvc {

inline constexpr const char* kOutputRootEnv = "EFDMVC_OUTPUT_ROOT";

// Relative output directories are placed under $EFDMVC_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / p;
  }
  return p;
}

inline MultiViewDataset load_experiment_data(const ExperimentConfig& cfg) {
  MultiViewDataset ds;
  if (!cfg.data_path.empty()) {
    ds = load_dataset(cfg.data_path);
  } else if (!cfg.csv_views.empty()) {
    std::optional<std::string> labels;
    if (!cfg.csv_labels.empty()) labels = cfg.csv_labels;
    ds = load_csv_dataset(cfg.csv_views, labels);
  } else {
    ds = generate_blobs(cfg.blobs());
  }
  if (cfg.standardize) standardize(ds);
  return ds;
}

struct MetricsRow {
  std::size_t round = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
};

inline constexpr const char* kMetricsHeader = "round,seed,acc,nmi,ari,kmeans_objective";

inline std::string format_metrics_row(const MetricsRow& r) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  char obj[48];
  std::snprintf(obj, sizeof obj, "%.6f", r.metrics.kmeans_objective);
  return std::to_string(r.round) + "," + std::to_string(r.seed) + "," + opt(r.metrics.acc) + "," +
         opt(r.metrics.nmi) + "," + opt(r.metrics.ari) + "," + obj;
}

struct ExperimentResult {
  std::filesystem::path output_dir;
  std::vector<MetricsRow> rows;
  std::vector<MetricsRow> finals;  // last row of every seed
};

namespace experiment_detail {

inline nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  auto put = [&](const char* k, const std::optional<double>& v) {
    j[k] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("acc", m.acc);
  put("nmi", m.nmi);
  put("ari", m.ari);
  j["kmeans_objective"] = m.kmeans_objective;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw FormatError("write failed: " + path.string());
}

}  // namespace experiment_detail

// Runs every repeat into `dir` (already resolved). Throws ConfigError for bad
// configuration and other efdmvc::Error types for runtime failures.
inline ExperimentResult run_experiment_in(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                          std::ostream& log) {
  cfg.validate();
  const MultiViewDataset ds = load_experiment_data(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("output_dir: cannot create " + dir.string() + ": " + ec.message());

  std::optional<ResumeState> resume;
  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    resume = ResumeState{std::move(ck.params), ck.round};
  }

  ExperimentResult result;
  result.output_dir = dir;
  nlohmann::json runs = nlohmann::json::array();
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t run_seed = cfg.seed + rep;
    const FederationConfig fed = cfg.federation(run_seed);
    EvalOptions eo;
    eo.views = cfg.eval_views;
    eo.kmeans.restarts = cfg.eval_restarts;
    eo.seed = derive_seed(run_seed, SeedStream::eval);
    const auto ckpt = dir / (cfg.repeats == 1 ? std::string("model.ckpt")
                                              : "model_seed" + std::to_string(run_seed) + ".ckpt");

    auto evaluate = [&](const ModelParams& p, std::size_t round) {
      MetricsRow row{round, run_seed, evaluate_global(p, ds, eo)};
      result.rows.push_back(row);
      return row;
    };
    auto hook = [&](const ServerState& s, const RoundReport& r) {
      save_checkpoint(s.global_params, r.round, ckpt.string());
      const bool last = r.round == fed.rounds;
      if (last || (cfg.eval_every > 0 && r.round % cfg.eval_every == 0)) evaluate(s.global_params, r.round);
    };

    FederationResult fr = run_federation(fed, ds, hook, resume);
    if (fr.history.empty()) {
      save_checkpoint(fr.server.global_params, fr.server.round, ckpt.string());
      evaluate(fr.server.global_params, fr.server.round);
    }
    const MetricsRow& fin = result.rows.back();
    result.finals.push_back(fin);

    nlohmann::json run = experiment_detail::metrics_json(fin.metrics);
    run["seed"] = run_seed;
    run["round"] = fin.round;
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& sh : fr.shards) {
      clients.push_back({{"client_id", sh.client_id},
                         {"type", to_string(sh.type)},
                         {"views", sh.views},
                         {"samples", sh.samples.size()}});
    }
    run["clients"] = clients;
    runs.push_back(run);

    log << "seed " << run_seed << " round " << fin.round;
    if (fin.metrics.acc) {
      char buf[96];
      std::snprintf(buf, sizeof buf, ": ACC=%.4f NMI=%.4f ARI=%.4f", *fin.metrics.acc, *fin.metrics.nmi,
                    *fin.metrics.ari);
      log << buf;
    } else {
      log << ": no labels, k-means objective " << fin.metrics.kmeans_objective;
    }
    log << "\n";
  }

  std::string csv = std::string(kMetricsHeader) + "\n";
  for (const auto& r : result.rows) csv += format_metrics_row(r) + "\n";
  experiment_detail::write_text(dir / "metrics.csv", csv);

  nlohmann::json summary;
  summary["runs"] = runs;
  nlohmann::json mean, stdev;
  for (const char* key : {"acc", "nmi", "ari", "kmeans_objective"}) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
      if (r[key].is_null()) continue;
      const double v = r[key].get<double>();
      s += v;
      s2 += v * v;
      ++n;
    }
    if (n == 0) {
      mean[key] = nullptr;
      stdev[key] = nullptr;
    } else {
      const double m = s / static_cast<double>(n);
      mean[key] = m;
      stdev[key] = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
    }
  }
  summary["mean"] = mean;
  summary["std"] = stdev;
  summary["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  experiment_detail::write_text(dir / "summary.json", summary.dump(2) + "\n");
  experiment_detail::write_text(dir / "config.resolved", to_kv(cfg));
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  cfg.validate();
  return run_experiment_in(cfg, resolve_output_dir(cfg.output_dir), log);
}

inline const std::vector<std::string>& sweepable_params() {
  static const std::vector<std::string> p{"alpha", "mu", "tau", "sigma_noise", "dirichlet_beta"};
  return p;
}

inline constexpr const char* kSweepHeader = "param,value,round,seed,acc,nmi,ari,kmeans_objective";

// One sub-run per value in <output_dir>/<param>_<value>, all with the same
// master seed, plus sweep.csv holding the final row of every sub-run.
inline std::vector<ExperimentResult> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                               const std::vector<std::string>& values,
                                               std::ostream& log = std::cout) {
  if (std::find(sweepable_params().begin(), sweepable_params().end(), param) == sweepable_params().end()) {
    throw ConfigError("param: cannot sweep '" + param + "' (alpha, mu, tau, sigma_noise, dirichlet_beta)");
  }
  if (values.empty()) throw ConfigError("values: empty value list");
  cfg.validate();
  const auto base = resolve_output_dir(cfg.output_dir);

  std::vector<ExperimentConfig> points;
  for (const auto& v : values) {
    ExperimentConfig sub = cfg;
    set_config_value(sub, param, v);
    sub.validate();
    sub.output_dir = (base / (param + "_" + config_detail::trim(v))).string();
    points.push_back(std::move(sub));
  }

  std::vector<ExperimentResult> results;
  std::string csv = std::string(kSweepHeader) + "\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    log << param << "=" << config_detail::trim(values[i]) << "\n";
    results.push_back(run_experiment_in(points[i], points[i].output_dir, log));
    for (const auto& f : results.back().finals) {
      csv += param + "," + config_detail::trim(values[i]) + "," + format_metrics_row(f) + "\n";
    }
  }
  std::filesystem::create_directories(base);
  experiment_detail::write_text(base / "sweep.csv", csv);
  return results;
}

// Exit status for the CLI: 0 success, 2 configuration problems (including
// partitions that cannot be formed), 1 any other failure.
template <typename Fn>
int run_guarded(Fn&& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const PartitionError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace efdmvc
