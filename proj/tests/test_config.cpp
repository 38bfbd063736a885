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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efdmvc.hpp"

using namespace efdmvc;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory named after the running test.
fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "efdmvc_tests" / (std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string(EFDMVC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

// Small and fast: K=3, V=2, C=4, R=5.
const char* kSmokeFlags =
    "--clusters 3 --view-dims 6,5 --samples 120 --clients 4 --rounds 5 --warmup-epochs 3 --latent-dim 4 "
    "--high-dim 8 --encoder-hidden 16 --feature-hidden 16 --eval-restarts 3 --seed 5";

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(ConfigParse, KeyValueTextWithComments) {
  ExperimentConfig c;
  apply_kv_text(c, "# header\nalpha = 0.3\n\nview_dims=4, 5,6  # trailing\nscenario=single_only\nno_drift=true\n");
  EXPECT_EQ(c.alpha, 0.3);
  EXPECT_EQ(c.view_dims, (std::vector<std::size_t>{4, 5, 6}));
  EXPECT_EQ(c.scenario, ViewScenario::single_only);
  EXPECT_TRUE(c.no_drift);
  EXPECT_THROW(apply_kv_text(c, "alpha 0.3\n"), ConfigError);
}

TEST(ConfigParse, JsonText) {
  ExperimentConfig c;
  apply_config_text(c, R"({"mu": 0.05, "view_dims": [3, 4], "fedavg": true, "dirichlet_beta": "iid", "seed": 9})");
  EXPECT_EQ(c.mu, 0.05);
  EXPECT_EQ(c.view_dims, (std::vector<std::size_t>{3, 4}));
  EXPECT_TRUE(c.fedavg);
  EXPECT_FALSE(c.dirichlet_beta.has_value());
  EXPECT_EQ(c.seed, 9u);
  EXPECT_THROW(apply_config_text(c, "{\"mu\": "), ConfigError);
  EXPECT_THROW(apply_json_text(c, "[1,2]"), ConfigError);
}

TEST(ConfigParse, UnknownKeyAndBadValues) {
  ExperimentConfig c;
  EXPECT_THROW(set_config_value(c, "alhpa", "0.5"), ConfigError);
  EXPECT_THROW(set_config_value(c, "rounds", "3x"), ConfigError);
  EXPECT_THROW(set_config_value(c, "rounds", "-1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "tau", "abc"), ConfigError);
  EXPECT_THROW(set_config_value(c, "no_drift", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(c, "scenario", "some"), ConfigError);
}

TEST(ConfigValidate, FieldLevelMessages) {
  auto message_for = [](auto mutate) {
    ExperimentConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(message_for([](ExperimentConfig& c) { c.alpha = 1.5; }).rfind("alpha", 0), 0u);
  EXPECT_EQ(message_for([](ExperimentConfig& c) { c.tau = 0.0; }).rfind("tau", 0), 0u);
  EXPECT_EQ(message_for([](ExperimentConfig& c) { c.mu = -1.0; }).rfind("mu", 0), 0u);
  EXPECT_EQ(message_for([](ExperimentConfig& c) { c.client_mix = ClientMix{1, 1, 1}; }).rfind("client_mix", 0), 0u);
  EXPECT_EQ(message_for([](ExperimentConfig&) {}), "");
}

TEST(ConfigResolved, RoundTripsEveryField) {
  ExperimentConfig c;
  apply_kv_text(c, "alpha=0.1\nmu=0.3\nclient_mix=1,2,3\nview_dims=7,8\ndirichlet_beta=iid\neval_views=1\n"
                   "optimizer=sgd\nalpha_c_mode=binary\nlr=0.0001\n");
  const std::string text = to_kv(c);
  ExperimentConfig back;
  apply_kv_text(back, text);
  EXPECT_EQ(to_kv(back), text);
  EXPECT_EQ(back.lr, 0.0001);
  ExperimentConfig from_json;
  apply_json_text(from_json, to_json(c).dump());
  EXPECT_EQ(to_kv(from_json), text);
  EXPECT_EQ(line_count(text), config_fields().size());
}

TEST(ConfigDerived, FederationSettings) {
  ExperimentConfig c;
  c.no_contrast = true;
  c.fedavg = true;
  c.threads = 4;
  c.deterministic = true;
  auto f = c.federation(17);
  EXPECT_EQ(f.seed, 17u);
  EXPECT_FALSE(f.use_contrast);
  EXPECT_TRUE(f.use_drift);
  EXPECT_EQ(f.aggregation, AggregationMode::fedavg);
  EXPECT_EQ(f.threads, 1u);
  EXPECT_EQ(f.loss.alpha, 0.5);
  EXPECT_EQ(f.loss.mu, 0.01);
}

TEST(Cli, AlphaOutOfRangeExitsTwoNamingAlpha) {
  auto dir = scratch_dir();
  auto r = cli("run --alpha 1.5 --output-dir " + (dir / "out").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("alpha"), std::string::npos) << r.output;
}

TEST(Cli, MissingDatasetExitsTwoNamingPath) {
  auto dir = scratch_dir();
  const std::string missing = (dir / "no_such_dataset.mvd").string();
  auto r = cli("run --data-path " + missing + " --output-dir " + (dir / "out").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find(missing), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitTwo) {
  auto dir = scratch_dir();
  EXPECT_EQ(cli("run --no-such-flag 1", dir).code, 2);
  EXPECT_EQ(cli("", dir).code, 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.cfg").string(), dir).code, 2);
  EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, SmokeRunWritesFourArtifacts) {
  auto dir = scratch_dir();
  const fs::path out = dir / "out";
  auto r = cli(std::string("run ") + kSmokeFlags + " --view-dims 6,5 --output-dir " + out.string(), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"metrics.csv", "summary.json", "model.ckpt", "config.resolved"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_NE(r.output.find("ACC="), std::string::npos);
  const std::string csv = slurp(out / "metrics.csv");
  EXPECT_EQ(csv.rfind(kMetricsHeader, 0), 0u);
  EXPECT_EQ(line_count(csv), 6u);  // header + rounds 1..5
  auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary["runs"][0]["clients"].size(), 4u);
  EXPECT_TRUE(summary["mean"]["acc"].is_number());
  const auto ck = load_checkpoint((out / "model.ckpt").string());
  EXPECT_EQ(ck.round, 5u);
  EXPECT_EQ(ck.params.arch.view_dims, (std::vector<std::size_t>{6, 5}));
}

TEST(Cli, RerunAndResolvedConfigReproduceMetricsBytes) {
  auto dir = scratch_dir();
  const std::string base = std::string("run ") + kSmokeFlags + " --deterministic";
  ASSERT_EQ(cli(base + " --output-dir " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(cli(base + " --output-dir " + (dir / "b").string(), dir).code, 0);
  ASSERT_EQ(cli("run --config " + (dir / "a" / "config.resolved").string() + " --output-dir " + (dir / "c").string(),
                dir)
                .code,
            0);
  const std::string a = slurp(dir / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(a, slurp(dir / "c" / "metrics.csv"));
}

TEST(Cli, OutputRootEnvironmentVariable) {
  auto dir = scratch_dir();
  const std::string cmd = "EFDMVC_OUTPUT_ROOT=" + dir.string() + " " + EFDMVC_CLI_PATH + " run " + kSmokeFlags +
                          " --rounds 1 --output-dir rel > " + (dir / "log").string() + " 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "rel" / "metrics.csv"));
}

TEST(Cli, SweepProducesOneRowPerValueAndSeed) {
  auto dir = scratch_dir();
  const fs::path out = dir / "sweep";
  auto r = cli(std::string("sweep ") + kSmokeFlags +
                   " --rounds 2 --repeats 2 --param alpha --values 0.1,0.3,0.5,0.7,0.9 --output-dir " + out.string(),
               dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(out / "sweep.csv");
  EXPECT_EQ(csv.rfind(kSweepHeader, 0), 0u);
  EXPECT_EQ(line_count(csv), 1u + 5u * 2u);
  for (const char* v : {"0.1", "0.3", "0.5", "0.7", "0.9"}) {
    EXPECT_TRUE(fs::exists(out / (std::string("alpha_") + v) / "metrics.csv")) << v;
    EXPECT_TRUE(fs::exists(out / (std::string("alpha_") + v) / "model_seed5.ckpt")) << v;
  }
}

TEST(Cli, SweepErrors) {
  auto dir = scratch_dir();
  EXPECT_EQ(cli(std::string("sweep ") + kSmokeFlags + " --param alpha --values , --output-dir " + dir.string(), dir)
                .code,
            2);
  EXPECT_EQ(cli(std::string("sweep ") + kSmokeFlags + " --param rounds --values 1,2 --output-dir " + dir.string(), dir)
                .code,
            2);
  EXPECT_EQ(cli(std::string("sweep ") + kSmokeFlags + " --param alpha --values 0.5,2 --output-dir " + dir.string(), dir)
                .code,
            2);
}

TEST(Cli, OneValueSweepEqualsRun) {
  auto dir = scratch_dir();
  const std::string flags = std::string(kSmokeFlags) + " --rounds 3";
  ASSERT_EQ(cli("run " + flags + " --mu 0.2 --output-dir " + (dir / "run").string(), dir).code, 0);
  ASSERT_EQ(cli("sweep " + flags + " --param mu --values 0.2 --output-dir " + (dir / "sw").string(), dir).code, 0);
  EXPECT_EQ(slurp(dir / "run" / "metrics.csv"), slurp(dir / "sw" / "mu_0.2" / "metrics.csv"));
  const std::string sweep_csv = slurp(dir / "sw" / "sweep.csv");
  const std::string run_csv = slurp(dir / "run" / "metrics.csv");
  const std::string last_run_row = run_csv.substr(run_csv.rfind('\n', run_csv.size() - 2) + 1);
  EXPECT_NE(sweep_csv.find("mu,0.2," + last_run_row), std::string::npos) << sweep_csv;
}

TEST(Cli, GenDataInspectAndEval) {
  auto dir = scratch_dir();
  const std::string data = (dir / "blobs.mvd").string();
  auto g = cli("gen-data --samples 90 --view-dims 4,3 --clusters 3 --seed 2 --out " + data, dir);
  ASSERT_EQ(g.code, 0) << g.output;
  const auto ds = load_dataset(data);
  EXPECT_EQ(ds.num_samples(), 90u);
  EXPECT_EQ(ds.view_dims(), (std::vector<std::size_t>{4, 3}));

  const fs::path out = dir / "out";
  ASSERT_EQ(cli("run --data-path " + data +
                    " --clients 3 --rounds 2 --warmup-epochs 2 --latent-dim 4 --high-dim 6 --encoder-hidden 8 "
                    "--feature-hidden 8 --output-dir " + out.string(),
                dir)
                .code,
            0);
  auto ins = cli("inspect " + (out / "model.ckpt").string(), dir);
  ASSERT_EQ(ins.code, 0) << ins.output;
  EXPECT_NE(ins.output.find("views 2 dims 4 3"), std::string::npos) << ins.output;
  EXPECT_NE(ins.output.find("round 2"), std::string::npos) << ins.output;

  auto ev = cli("eval --data-path " + data + " --checkpoint " + (out / "model.ckpt").string(), dir);
  ASSERT_EQ(ev.code, 0) << ev.output;
  EXPECT_EQ(ev.output.rfind(kMetricsHeader, 0), 0u) << ev.output;
  EXPECT_EQ(line_count(ev.output), 2u);

  EXPECT_EQ(cli("inspect " + (dir / "missing.ckpt").string(), dir).code, 2);
  auto mismatch = cli("eval --view-dims 5,5 --checkpoint " + (out / "model.ckpt").string(), dir);
  EXPECT_EQ(mismatch.code, 2) << mismatch.output;
}

TEST(Experiment, UnlabeledDataLeavesMetricFieldsEmpty) {
  auto dir = scratch_dir();
  BlobSpec spec;
  spec.samples = 60;
  spec.view_dims = {3, 3};
  auto ds = generate_blobs(spec);
  ds.labels.reset();
  ds.clusters = 0;
  save_dataset(ds, (dir / "u.mvd").string());
  ExperimentConfig c;
  c.data_path = (dir / "u.mvd").string();
  c.clients = 2;
  c.rounds = 1;
  c.warmup_epochs = 1;
  c.encoder_hidden = c.feature_hidden = 8;
  c.output_dir = (dir / "out").string();
  std::ostringstream log;
  auto res = run_experiment(c, log);
  ASSERT_EQ(res.rows.size(), 1u);
  EXPECT_FALSE(res.rows[0].metrics.acc.has_value());
  const std::string csv = slurp(dir / "out" / "metrics.csv");
  EXPECT_NE(csv.find("\n1,0,,,,"), std::string::npos) << csv;
}

TEST(Experiment, RunGuardedMapsErrorsToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(run_guarded([] {}, err), 0);
  EXPECT_EQ(run_guarded([] { throw ConfigError("x"); }, err), 2);
  EXPECT_EQ(run_guarded([] { throw PartitionError("x"); }, err), 2);
  EXPECT_EQ(run_guarded([] { throw TrainingError("round 3, client 1: boom"); }, err), 1);
  EXPECT_NE(err.str().find("round 3, client 1"), std::string::npos);
}
