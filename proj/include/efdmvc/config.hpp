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

// Experiment configuration: a flat set of named keys, read from key=value
// text or a JSON object, overridable one key at a time, and written back out
// with every default filled in.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "efdmvc/error.hpp"
#include "efdmvc/federation.hpp"

namespace efdmvc {

struct ExperimentConfig {
  std::uint64_t seed = 0;

  // Data source: data_path (MVD1 file), else csv_views, else generated blobs.
  std::string data_path;
  std::vector<std::string> csv_views;
  std::string csv_labels;
  std::size_t clusters = 3;
  std::size_t samples = 600;
  std::vector<std::size_t> view_dims{10, 10, 10};
  double separation = 6.0;
  double noise_sigma = 1.0;
  bool standardize = true;

  // Federation
  std::size_t clients = 6;
  ViewScenario scenario = ViewScenario::mixed;
  std::optional<ClientMix> client_mix;
  std::optional<double> dirichlet_beta = 10.0;  // nullopt = iid
  std::size_t rounds = 30;
  std::size_t warmup_epochs = 20;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;

  // Model
  std::size_t latent_dim = 16;
  std::size_t high_dim = 32;
  std::size_t encoder_hidden = 128;
  std::size_t feature_hidden = 128;
  Activation activation = Activation::relu;

  // Losses
  double tau = 0.5;
  double alpha = 0.5;
  double mu = 0.01;
  double sigma_noise = 0.1;
  CoverageWeight alpha_c_mode = CoverageWeight::linear;

  // Ablations
  bool no_drift = false;
  bool no_contrast = false;
  bool fedavg = false;

  // Evaluation and output
  std::size_t eval_restarts = 10;
  std::vector<std::size_t> eval_views;  // empty = all views
  std::size_t eval_every = 1;           // 0 = final round only
  std::size_t repeats = 1;              // seeds seed, seed+1, ...
  std::string output_dir = "efdmvc_out";
  std::string resume;                   // checkpoint to continue from
  std::size_t threads = 1;
  bool deterministic = false;

  void validate() const;
  FederationConfig federation(std::uint64_t run_seed) const;
  BlobSpec blobs() const;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

[[noreturn]] inline void bad(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError(std::string(key) + ": invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

inline std::uint64_t parse_u64(std::string_view key, std::string_view raw) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad(key, raw, "a non-negative integer");
  return v;
}

inline std::size_t parse_size(std::string_view key, std::string_view raw) {
  return static_cast<std::size_t>(parse_u64(key, raw));
}

inline double parse_double(std::string_view key, std::string_view raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) bad(key, raw, "a number");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad(key, raw, "true or false");
}

inline std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view raw) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(raw)) out.push_back(parse_size(key, item));
  return out;
}

// Shortest text that reads back to the same value.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

}  // namespace config_detail

struct ConfigField {
  std::string name;
  std::string help;
  bool is_bool = false;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Every key, in the order the resolved config is written.
inline const std::vector<ConfigField>& config_fields() {
  using namespace config_detail;
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto size_field = [&](const char* name, const char* help, std::size_t C::*m) {
      f.push_back({name, help, false, [name, m](C& c, std::string_view s) { c.*m = parse_size(name, s); },
                   [m](const C& c) { return std::to_string(c.*m); }});
    };
    auto double_field = [&](const char* name, const char* help, double C::*m) {
      f.push_back({name, help, false, [name, m](C& c, std::string_view s) { c.*m = parse_double(name, s); },
                   [m](const C& c) { return fmt_double(c.*m); }});
    };
    auto bool_field = [&](const char* name, const char* help, bool C::*m) {
      f.push_back({name, help, true, [name, m](C& c, std::string_view s) { c.*m = parse_bool(name, s); },
                   [m](const C& c) { return std::string(c.*m ? "true" : "false"); }});
    };
    auto string_field = [&](const char* name, const char* help, std::string C::*m) {
      f.push_back({name, help, false, [m](C& c, std::string_view s) { c.*m = trim(s); },
                   [m](const C& c) { return c.*m; }});
    };
    auto list_field = [&](const char* name, const char* help, std::vector<std::size_t> C::*m) {
      f.push_back({name, help, false, [name, m](C& c, std::string_view s) { c.*m = parse_size_list(name, s); },
                   [m](const C& c) { return join(c.*m); }});
    };

    f.push_back({"seed", "master seed", false, [](C& c, std::string_view s) { c.seed = parse_u64("seed", s); },
                 [](const C& c) { return std::to_string(c.seed); }});
    string_field("data_path", "MVD1 dataset file (overrides blobs)", &C::data_path);
    f.push_back({"csv_views", "comma-separated CSV files, one per view", false,
                 [](C& c, std::string_view s) {
                   c.csv_views.clear();
                   for (auto& p : split_list(s))
                     if (!p.empty()) c.csv_views.push_back(p);
                 },
                 [](const C& c) { return join(c.csv_views); }});
    string_field("csv_labels", "CSV file with one integer label per line", &C::csv_labels);
    size_field("clusters", "number of clusters K", &C::clusters);
    size_field("samples", "blob samples N", &C::samples);
    list_field("view_dims", "blob view dimensions, comma-separated", &C::view_dims);
    double_field("separation", "blob mean separation", &C::separation);
    double_field("noise_sigma", "blob noise std", &C::noise_sigma);
    bool_field("standardize", "z-score every feature before partitioning", &C::standardize);

    size_field("clients", "number of clients C", &C::clients);
    f.push_back({"scenario", "mixed | full_only | single_only", false,
                 [](C& c, std::string_view raw) {
                   const auto s = trim(raw);
                   if (s == "mixed") c.scenario = ViewScenario::mixed;
                   else if (s == "full_only") c.scenario = ViewScenario::full_only;
                   else if (s == "single_only") c.scenario = ViewScenario::single_only;
                   else bad("scenario", raw, "mixed, full_only or single_only");
                 },
                 [](const C& c) {
                   switch (c.scenario) {
                     case ViewScenario::full_only: return std::string("full_only");
                     case ViewScenario::single_only: return std::string("single_only");
                     default: return std::string("mixed");
                   }
                 }});
    f.push_back({"client_mix", "full,partial,single client counts (empty = random subsets)", false,
                 [](C& c, std::string_view raw) {
                   if (trim(raw).empty()) {
                     c.client_mix.reset();
                     return;
                   }
                   const auto v = parse_size_list("client_mix", raw);
                   if (v.size() != 3) bad("client_mix", raw, "three counts full,partial,single");
                   c.client_mix = ClientMix{v[0], v[1], v[2]};
                 },
                 [](const C& c) {
                   if (!c.client_mix) return std::string();
                   return join(std::vector<std::size_t>{c.client_mix->full, c.client_mix->partial,
                                                        c.client_mix->single});
                 }});
    f.push_back({"dirichlet_beta", "Dirichlet concentration, or iid", false,
                 [](C& c, std::string_view raw) {
                   if (trim(raw) == "iid") c.dirichlet_beta.reset();
                   else c.dirichlet_beta = parse_double("dirichlet_beta", raw);
                 },
                 [](const C& c) { return c.dirichlet_beta ? fmt_double(*c.dirichlet_beta) : std::string("iid"); }});
    size_field("rounds", "communication rounds R", &C::rounds);
    size_field("warmup_epochs", "reconstruction-only epochs before round 1", &C::warmup_epochs);
    size_field("local_epochs", "local epochs per round", &C::local_epochs);
    size_field("batch_size", "mini-batch size", &C::batch_size);
    double_field("lr", "learning rate", &C::lr);
    f.push_back({"optimizer", "adam | sgd", false,
                 [](C& c, std::string_view raw) {
                   const auto s = trim(raw);
                   if (s == "adam") c.optimizer = OptimizerKind::adam;
                   else if (s == "sgd") c.optimizer = OptimizerKind::sgd;
                   else bad("optimizer", raw, "adam or sgd");
                 },
                 [](const C& c) { return std::string(c.optimizer == OptimizerKind::adam ? "adam" : "sgd"); }});

    size_field("latent_dim", "autoencoder code size d", &C::latent_dim);
    size_field("high_dim", "feature size h", &C::high_dim);
    size_field("encoder_hidden", "encoder/decoder hidden width (0 = none)", &C::encoder_hidden);
    size_field("feature_hidden", "feature network hidden width (0 = none)", &C::feature_hidden);
    f.push_back({"activation", "relu | identity", false,
                 [](C& c, std::string_view raw) {
                   const auto s = trim(raw);
                   if (s == "relu") c.activation = Activation::relu;
                   else if (s == "identity") c.activation = Activation::identity;
                   else bad("activation", raw, "relu or identity");
                 },
                 [](const C& c) { return std::string(c.activation == Activation::relu ? "relu" : "identity"); }});

    double_field("tau", "contrast temperature", &C::tau);
    double_field("alpha", "contrast/drift balance in [0,1]", &C::alpha);
    double_field("mu", "proximal strength", &C::mu);
    double_field("sigma_noise", "input noise std for single-view clients", &C::sigma_noise);
    f.push_back({"alpha_c_mode", "linear | quadratic | binary", false,
                 [](C& c, std::string_view raw) {
                   const auto s = trim(raw);
                   if (s == "linear") c.alpha_c_mode = CoverageWeight::linear;
                   else if (s == "quadratic") c.alpha_c_mode = CoverageWeight::quadratic;
                   else if (s == "binary") c.alpha_c_mode = CoverageWeight::binary;
                   else bad("alpha_c_mode", raw, "linear, quadratic or binary");
                 },
                 [](const C& c) {
                   switch (c.alpha_c_mode) {
                     case CoverageWeight::quadratic: return std::string("quadratic");
                     case CoverageWeight::binary: return std::string("binary");
                     default: return std::string("linear");
                   }
                 }});

    bool_field("no_drift", "drop the drift and proximal terms", &C::no_drift);
    bool_field("no_contrast", "drop the contrastive terms", &C::no_contrast);
    bool_field("fedavg", "sample-count weights only", &C::fedavg);

    size_field("eval_restarts", "k-means restarts", &C::eval_restarts);
    list_field("eval_views", "views used at evaluation (empty = all)", &C::eval_views);
    size_field("eval_every", "evaluate every n rounds (0 = final only)", &C::eval_every);
    size_field("repeats", "runs with seeds seed, seed+1, ...", &C::repeats);
    string_field("output_dir", "artifact directory", &C::output_dir);
    string_field("resume", "checkpoint to resume from", &C::resume);
    size_field("threads", "client worker threads", &C::threads);
    bool_field("deterministic", "force one thread", &C::deterministic);
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(std::string_view name) {
  for (const auto& f : config_fields())
    if (f.name == name) return &f;
  return nullptr;
}

inline void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const ConfigField* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + std::string(key) + "'");
  f->set(c, value);
}

inline void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(std::string(field) + ": " + what);
  };
  need(clusters >= 1, "clusters", "must be >= 1");
  need(!view_dims.empty(), "view_dims", "needs at least one view");
  for (std::size_t d : view_dims) need(d >= 1, "view_dims", "every dimension must be >= 1");
  need(samples >= clusters, "samples", "must be >= clusters");
  need(separation >= 0.0, "separation", "must be >= 0");
  need(noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
  need(clients >= 1, "clients", "must be >= 1");
  if (client_mix) {
    need(scenario == ViewScenario::mixed, "client_mix", "requires scenario=mixed");
    need(client_mix->total() == clients, "client_mix",
         "counts sum to " + std::to_string(client_mix->total()) + ", clients is " + std::to_string(clients));
  }
  if (dirichlet_beta) need(*dirichlet_beta > 0.0, "dirichlet_beta", "must be > 0 or iid");
  need(batch_size >= 1, "batch_size", "must be >= 1");
  need(lr > 0.0, "lr", "must be > 0");
  need(latent_dim >= 1, "latent_dim", "must be >= 1");
  need(high_dim >= 1, "high_dim", "must be >= 1");
  need(tau > 0.0, "tau", "must be > 0");
  need(alpha >= 0.0 && alpha <= 1.0, "alpha", "must be in [0,1]");
  need(mu >= 0.0, "mu", "must be >= 0");
  need(sigma_noise >= 0.0, "sigma_noise", "must be >= 0");
  need(eval_restarts >= 1, "eval_restarts", "must be >= 1");
  need(repeats >= 1, "repeats", "must be >= 1");
  need(threads >= 1, "threads", "must be >= 1");
  need(!output_dir.empty(), "output_dir", "must not be empty");
  need(resume.empty() || repeats == 1, "resume", "needs repeats=1");
  need(csv_views.empty() || data_path.empty(), "csv_views", "cannot be combined with data_path");
  need(csv_labels.empty() || !csv_views.empty(), "csv_labels", "needs csv_views");
}

inline BlobSpec ExperimentConfig::blobs() const {
  BlobSpec b;
  b.clusters = clusters;
  b.samples = samples;
  b.view_dims = view_dims;
  b.separation = separation;
  b.noise_sigma = noise_sigma;
  b.seed = derive_seed(seed, SeedStream::data);
  return b;
}

inline FederationConfig ExperimentConfig::federation(std::uint64_t run_seed) const {
  FederationConfig f;
  f.seed = run_seed;
  f.clients = clients;
  f.scenario = scenario;
  f.client_mix = client_mix;
  f.dirichlet_beta = dirichlet_beta;
  f.rounds = rounds;
  f.warmup_epochs = warmup_epochs;
  f.local_epochs = local_epochs;
  f.batch_size = batch_size;
  f.lr = lr;
  f.optimizer = optimizer;
  f.loss = LossConfig{tau, alpha, mu, sigma_noise};
  f.coverage = alpha_c_mode;
  f.aggregation = fedavg ? AggregationMode::fedavg : AggregationMode::balanced;
  f.use_contrast = !no_contrast;
  f.use_drift = !no_drift;
  f.threads = deterministic ? 1 : threads;
  f.arch.latent_dim = latent_dim;
  f.arch.high_dim = high_dim;
  f.arch.clusters = clusters;
  f.arch.encoder_hidden = encoder_hidden;
  f.arch.feature_hidden = feature_hidden;
  f.arch.activation = activation;
  return f;
}

// key=value lines; '#' starts a comment; blank lines ignored.
inline void apply_kv_text(ExperimentConfig& c, std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (config_detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    set_config_value(c, config_detail::trim(std::string_view(line).substr(0, eq)),
                     std::string_view(line).substr(eq + 1));
  }
}

// A JSON object whose members are config keys. Arrays become comma lists.
inline void apply_json_text(ExperimentConfig& c, std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config JSON: top level must be an object");
  auto scalar = [](const std::string& key, const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_float()) return config_detail::fmt_double(v.get<double>());
    if (v.is_null()) return "";
    throw ConfigError(key + ": unsupported JSON value");
  };
  for (const auto& [key, v] : j.items()) {
    std::string raw;
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) raw += (i ? "," : "") + scalar(key, v[i]);
    } else {
      raw = scalar(key, v);
    }
    set_config_value(c, key, raw);
  }
}

// JSON when the first non-blank character is '{', key=value otherwise.
inline void apply_config_text(ExperimentConfig& c, std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    apply_json_text(c, text);
  } else {
    apply_kv_text(c, text);
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file does not exist or is unreadable: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(c, ss.str());
}

inline std::string to_kv(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : config_fields()) out += f.name + "=" + f.get(c) + "\n";
  return out;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) j[f.name] = f.get(c);
  return j;
}

}  // namespace efdmvc
