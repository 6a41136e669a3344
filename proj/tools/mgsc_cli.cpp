// Copyright 2026 The MGSC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mgsc: train and evaluate the ablation variants, dump attention and
// representations from checkpoints, and run the gradient and CTC oracles.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mgsc/mgsc.hpp"
#include "mgsc/testing/ctc_enumeration.hpp"
#include "mgsc/testing/gradient_suite.hpp"

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kCtcTolerance = 1e-9;

struct Common {
  std::string config;
  std::string out = "mgsc_out";
  std::vector<std::string> overrides;
};

mgsc::ExperimentConfig build_config(const Common& c) {
  mgsc::ExperimentConfig cfg = c.config.empty() ? mgsc::ExperimentConfig{} : mgsc::load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw mgsc::ValidationError("--set expects key=value, got '" + kv + "'");
    mgsc::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  if (with_out) app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
}

std::vector<mgsc::SyntheticSample> dump_samples(const mgsc::ExperimentConfig& cfg, std::uint64_t seed,
                                                std::size_t count, double snr_db) {
  auto samples = mgsc::generate_dataset(cfg.task, count, seed);
  const mgsc::Condition cond{mgsc::condition_name(snr_db), snr_db};
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].features = mgsc::condition_features(samples[i], i, cond, seed);
  return samples;
}

mgsc::ModelParams checked_checkpoint(const std::string& path, const mgsc::ExperimentConfig& cfg) {
  auto p = mgsc::load_checkpoint(path);
  if (p.dims().feature_dim != cfg.task.feature_dim || p.dims().vocab != cfg.task.vocab + 1) {
    throw mgsc::ValidationError("checkpoint dims do not match the configured task (feature_dim " +
                                std::to_string(cfg.task.feature_dim) + ", vocab " + std::to_string(cfg.task.vocab) +
                                ")");
  }
  return p;
}

int cmd_run(const Common& c, std::optional<std::uint64_t> seed) {
  auto cfg = build_config(c);
  if (seed) cfg.seeds = {*seed};
  const auto outcome = mgsc::run_ablation(cfg, c.out, [](const std::string& msg) { std::cerr << msg << '\n'; });
  std::cout << outcome.report.to_table();
  bool any_failed = false;
  for (const auto& r : outcome.runs) any_failed |= r.failed;
  std::cout << "wrote " << (fs::path(c.out) / "report.csv").string() << '\n';
  return any_failed ? 1 : 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t points) {
  bool ok = true;
  for (const auto& r : mgsc::testing::run_gradient_checks(seed, points)) {
    const bool pass = r.points >= points && r.max_rel_error < kGradTolerance;
    ok &= pass;
    std::printf("%-32s points=%-3zu max_rel_error=%.3e %s\n", r.name.c_str(), r.points, r.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_ctc_oracle(std::uint64_t seed, std::size_t instances) {
  const auto r = mgsc::testing::ctc_oracle_sweep(seed, instances);
  const double uniform_err = std::abs(r.uniform_case_value - r.uniform_case_enumerated);
  const bool ok = r.instances == instances && r.max_abs_error < kCtcTolerance && uniform_err < kCtcTolerance;
  std::printf("instances=%zu grid_cells=%zu max_abs_error=%.3e\n", r.instances, r.grid_cells, r.max_abs_error);
  std::printf("t=3 uniform two-symbol case: recursion %.12f enumeration %.12f %s\n", r.uniform_case_value,
              r.uniform_case_enumerated, ok ? "ok" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency-regularized seq2seq ablations on a synthetic transduction task"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "print every config key with its default value and exit");

  Common run_opts;
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "train and evaluate every (variant, seed) pair");
  add_common(run, run_opts);
  run->add_option("--seed", run_seed, "run a single seed instead of experiment.seeds");

  Common attn_opts, repr_opts;
  std::string attn_ckpt, repr_ckpt;
  std::optional<std::uint64_t> attn_seed, repr_seed;
  std::size_t attn_count = 5, repr_count = 100;
  std::string attn_snr = "clean";
  auto* attn = app.add_subcommand("dump-attn", "write free-running attention matrices and alignment paths");
  add_common(attn, attn_opts);
  attn->add_option("--checkpoint", attn_ckpt, "model checkpoint")->required();
  attn->add_option("--seed", attn_seed, "sample seed (default data.test_seed)");
  attn->add_option("--count", attn_count, "number of samples")->capture_default_str();
  attn->add_option("--snr", attn_snr, "condition: clean or an SNR in dB")->capture_default_str();

  auto* repr = app.add_subcommand("dump-repr", "write pooled encoder/decoder representations and their gap");
  add_common(repr, repr_opts);
  repr->add_option("--checkpoint", repr_ckpt, "model checkpoint")->required();
  repr->add_option("--seed", repr_seed, "sample seed (default data.test_seed)");
  repr->add_option("--count", repr_count, "number of samples")->capture_default_str();

  std::uint64_t gc_seed = 1;
  std::size_t gc_points = 20;
  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with central finite differences");
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--points", gc_points, "random points per loss")->capture_default_str();

  std::uint64_t ctc_seed = 1;
  std::size_t ctc_instances = 100;
  auto* ctc = app.add_subcommand("ctc-oracle", "compare CTC forward recursion with exhaustive path enumeration");
  ctc->add_option("--seed", ctc_seed)->capture_default_str();
  ctc->add_option("--instances", ctc_instances)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_defaults) {
      std::cout << mgsc::format_config(mgsc::ExperimentConfig{});
      return 0;
    }
    if (*run) return cmd_run(run_opts, run_seed);
    if (*attn) {
      const auto cfg = build_config(attn_opts);
      const auto params = checked_checkpoint(attn_ckpt, cfg);
      const auto samples = dump_samples(cfg, attn_seed.value_or(cfg.test_seed), attn_count,
                                        mgsc::detail::parse_snr(attn_snr));
      for (const auto& f : mgsc::dump_attention(params, samples, attn_opts.out, cfg.max_decode_len())) {
        std::cout << f.string() << '\n';
      }
      return 0;
    }
    if (*repr) {
      const auto cfg = build_config(repr_opts);
      const auto params = checked_checkpoint(repr_ckpt, cfg);
      const auto samples = dump_samples(cfg, repr_seed.value_or(cfg.test_seed), repr_count,
                                        std::numeric_limits<double>::infinity());
      fs::create_directories(repr_opts.out);
      const auto path = fs::path(repr_opts.out) / "representations.csv";
      mgsc::write_text(path, mgsc::dump_representations(params, samples));
      std::cout << path.string() << '\n';
      return 0;
    }
    if (*gc) return cmd_gradcheck(gc_seed, gc_points);
    if (*ctc) return cmd_ctc_oracle(ctc_seed, ctc_instances);
    std::cout << app.help();
    return 0;
  } catch (const mgsc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
