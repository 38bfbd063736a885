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

// efdmvc command line: run, sweep, gen-data, eval, inspect.
//
// Every config key is a flag of the same name (underscores or dashes), and
// flags override values read from --config.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "efdmvc.hpp"

namespace {

using efdmvc::ExperimentConfig;

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
  app->add_option("--config", flags.config_path, "key=value or JSON config file");
  for (const auto& f : efdmvc::config_fields()) {
    std::string names = "--" + f.name;
    std::string dashed = f.name;
    for (char& c : dashed)
      if (c == '_') c = '-';
    if (dashed != f.name) names = "--" + dashed + "," + names;
    auto& target = flags.values[f.name];
    CLI::Option* opt = f.is_bool ? app->add_flag(names, target, f.help) : app->add_option(names, target, f.help);
    // A repeated flag overrides the earlier occurrence.
    flags.options[f.name] = opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

ExperimentConfig resolve(const ConfigFlags& flags) {
  ExperimentConfig cfg;
  if (!flags.config_path.empty()) efdmvc::apply_config_file(cfg, flags.config_path);
  for (const auto& [name, opt] : flags.options) {
    if (opt->count() > 0) efdmvc::set_config_value(cfg, name, flags.values.at(name));
  }
  cfg.validate();
  return cfg;
}

void print_architecture(const efdmvc::Architecture& a) {
  std::cout << "views " << a.view_dims.size() << " dims";
  for (std::size_t d : a.view_dims) std::cout << " " << d;
  std::cout << "\nlatent_dim " << a.latent_dim << "\nhigh_dim " << a.high_dim << "\nclusters " << a.clusters
            << "\nencoder_hidden " << a.encoder_hidden << "\nfeature_hidden " << a.feature_hidden << "\nactivation "
            << (a.activation == efdmvc::Activation::relu ? "relu" : "identity") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-view clustering simulator"};
  app.require_subcommand(1);

  ConfigFlags run_flags, sweep_flags, gen_flags, eval_flags;
  auto* run = app.add_subcommand("run", "train and evaluate one configuration");
  add_config_flags(run, run_flags);

  auto* sweep = app.add_subcommand("sweep", "run one configuration per value of a parameter");
  add_config_flags(sweep, sweep_flags);
  std::string sweep_param, sweep_values;
  sweep->add_option("--param", sweep_param, "alpha, mu, tau, sigma_noise or dirichlet_beta")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();

  auto* gen = app.add_subcommand("gen-data", "write a synthetic blob dataset (MVD1)");
  add_config_flags(gen, gen_flags);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_config_flags(eval, eval_flags);
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

  auto* inspect = app.add_subcommand("inspect", "print a checkpoint's architecture");
  std::string inspect_ckpt;
  inspect->add_option("checkpoint", inspect_ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  return efdmvc::run_guarded([&] {
    if (run->parsed()) {
      efdmvc::run_experiment(resolve(run_flags));
    } else if (sweep->parsed()) {
      std::vector<std::string> values;
      for (auto& v : efdmvc::config_detail::split_list(sweep_values))
        if (!v.empty()) values.push_back(v);
      efdmvc::run_sweep(resolve(sweep_flags), sweep_param, values);
    } else if (gen->parsed()) {
      const ExperimentConfig cfg = resolve(gen_flags);
      const auto ds = efdmvc::generate_blobs(cfg.blobs());
      efdmvc::save_dataset(ds, gen_out);
      std::cout << "wrote " << gen_out << ": " << ds.num_views() << " views, " << ds.num_samples() << " samples\n";
    } else if (eval->parsed()) {
      const ExperimentConfig cfg = resolve(eval_flags);
      const auto ds = efdmvc::load_experiment_data(cfg);
      const auto ck = efdmvc::load_checkpoint(eval_ckpt);
      if (ck.params.arch.view_dims != ds.view_dims()) {
        throw efdmvc::ConfigError("checkpoint view dims do not match the dataset");
      }
      efdmvc::EvalOptions eo;
      eo.views = cfg.eval_views;
      eo.kmeans.restarts = cfg.eval_restarts;
      eo.seed = efdmvc::derive_seed(cfg.seed, efdmvc::SeedStream::eval);
      const auto m = efdmvc::evaluate_global(ck.params, ds, eo);
      std::cout << efdmvc::kMetricsHeader << "\n"
                << efdmvc::format_metrics_row({ck.round, cfg.seed, m}) << "\n";
    } else if (inspect->parsed()) {
      const auto ck = efdmvc::load_checkpoint(inspect_ckpt);
      print_architecture(ck.params.arch);
      std::cout << "round " << ck.round << "\nparameters " << ck.params.parameter_count() << "\n";
    }
  });
}
