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

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
//
//   acceptance --out DIR [--cli PATH]
//
// With --cli, determinism is checked by rerunning the ablation through the
// command-line tool; otherwise a second in-process run is used.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "mgsc/mgsc.hpp"
#include "mgsc/testing/ctc_enumeration.hpp"
#include "mgsc/testing/gradient_suite.hpp"

namespace fs = std::filesystem;
using namespace mgsc;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Mat one_hot_rows(const std::vector<std::size_t>& cols, std::size_t t_in) {
  Mat m(cols.size(), t_in, 0.0);
  for (std::size_t i = 0; i < cols.size(); ++i) m(i, cols[i]) = 1.0;
  return m;
}

void golden_values() {
  const double a = alignment_loss(AttentionMatrix<double>(one_hot_rows({2, 0}, 3))).value;
  const double b = alignment_loss(AttentionMatrix<double>(one_hot_rows({0, 2, 1, 3}, 4))).value;
  const double c = sentence_loss<double>({1, 0}, {0, 1}).value;
  const double d = sentence_loss<double>({1, 0}, {-1, 0}).value;
  const double err = std::max({std::abs(a - 2.0), std::abs(b - 1.0 / 3.0), std::abs(c - 1.0), std::abs(d - 2.0)});
  report(1, err <= 1e-12, fmt("align[2,0]=%.15g align[0,2,1,3]=%.15g orthogonal=%.15g antiparallel=%.15g", a, b, c, d));
}

void gradient_suites() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = testing::run_gradient_checks(2026, 20);
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  double worst = 0;
  std::string detail;
  for (const auto& r : results) {
    ok &= r.points >= 20 && r.max_rel_error < 1e-4;
    worst = std::max(worst, r.max_rel_error);
    detail += fmt(" %s=%.1e/%zu", r.name.c_str(), r.max_rel_error, r.points);
  }
  report(2, ok, fmt("max_rel_error=%.2e runtime=%.1fs;", worst, secs) + detail);
}

void ctc_oracle() {
  const auto r = testing::ctc_oracle_sweep(2026, 100);
  const double expected = -std::log(5.0 / 8.0);
  const double analytic_err = std::abs(r.uniform_case_value - expected);
  report(3, r.instances == 100 && r.max_abs_error < 1e-9 && analytic_err < 1e-9,
         fmt("instances=%zu cells=%zu max_abs_error=%.2e; t=3 uniform v=2: recursion %.10f, enumeration %.10f, "
             "expected -ln(5/8)=%.10f",
             r.instances, r.grid_cells, r.max_abs_error, r.uniform_case_value, r.uniform_case_enumerated, expected));
}

void scale_invariance() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0;
  for (int pair = 0; pair < 100; ++pair) {
    std::vector<double> u(16), v(16);
    for (auto& x : u) x = n(rng);
    for (auto& x : v) x = n(rng);
    const double ref = sentence_loss(u, v).value;
    for (double a : {0.1, 1.0, 3.7}) {
      for (double b : {0.1, 1.0, 3.7}) {
        auto su = u, sv = v;
        for (auto& x : su) x *= a;
        for (auto& x : sv) x *= b;
        worst = std::max(worst, std::abs(sentence_loss(su, sv).value - ref));
      }
    }
  }
  report(4, worst < 1e-9, fmt("max deviation=%.2e over 100 pairs x 9 scalings", worst));
}

void snr_fidelity() {
  TaskConfig task;
  const auto samples = generate_dataset(task, 50, 5);
  double worst = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (double snr : {0.0, 2.5, 5.0, 7.5, 10.0}) {
      const Mat noisy = inject_noise(samples[i].features, {snr, noise_seed(5, i, snr)});
      worst = std::max(worst, std::abs(measured_snr_db(samples[i].features, noisy) - snr));
    }
  }
  report(5, worst < 0.1, fmt("max |measured - target|=%.2e dB over 50 matrices x 5 SNRs", worst));
}

std::string synergy(const fs::path& dir) {
  const ExperimentConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = run_ablation(cfg, dir, [](const std::string& msg) { std::fprintf(stderr, "  %s\n", msg.c_str()); });
  const double secs = seconds_since(t0);
  std::printf("%s", out.report.to_table().c_str());
  const auto& s = out.summary;
  const auto& base = s.at("baseline");
  const auto& align = s.at("align");
  const auto& sent = s.at("sentence");
  const auto& mgsc = s.at("mgsc");
  for (const auto& [name, v] : s) {
    std::printf("  %-9s median noisy-avg CER %.2f%%  0dB violation rate %.4f  representation gap %.4f  runs %zu\n",
                name.c_str(), 100 * v.noisy_average_cer, v.violation_rate_0db, v.representation_gap,
                v.successful_runs);
  }
  const bool enough = cfg.seeds.size() >= 5 && base.successful_runs >= 5 && align.successful_runs >= 5 &&
                      sent.successful_runs >= 5 && mgsc.successful_runs >= 5;
  const bool a = mgsc.noisy_average_cer < base.noisy_average_cer;
  const bool b = mgsc.noisy_average_cer <= std::min(align.noisy_average_cer, sent.noisy_average_cer);
  const bool c = mgsc.violation_rate_0db <= 0.5 * base.violation_rate_0db &&
                 align.violation_rate_0db <= 0.5 * base.violation_rate_0db;
  const bool d = mgsc.representation_gap < base.representation_gap && sent.representation_gap < base.representation_gap;
  report(6, enough && a && b && c && d && secs < 900.0,
         fmt("(a) mgsc<baseline %s  (b) mgsc<=min(align,sentence) %s  (c) violations<=50%% %s  (d) gap<baseline %s  "
             "seeds=%zu runtime=%.0fs",
             a ? "yes" : "no", b ? "yes" : "no", c ? "yes" : "no", d ? "yes" : "no", cfg.seeds.size(), secs));
  return slurp(dir / "report.csv");
}

void baseline_equivalence() {
  ExperimentConfig cfg;
  cfg.steps = 50;
  cfg.log_every = 1;
  const auto train = training_set(cfg);
  auto bare = cfg.objective(Variant::kBaseline);
  bare.construct_consistency = false;
  const auto with_terms = train_model(cfg, Variant::kBaseline, 1, train, cfg.objective(Variant::kBaseline));
  const auto without = train_model(cfg, Variant::kBaseline, 1, train, bare);
  bool same = with_terms.params == without.params && with_terms.log.size() == without.log.size();
  for (std::size_t i = 0; same && i < with_terms.log.size(); ++i) {
    same = with_terms.log[i].losses.l_total == without.log[i].losses.l_total &&
           with_terms.log[i].losses.l_asr == without.log[i].losses.l_asr;
  }
  report(7, same && !with_terms.failed, fmt("50 steps, %zu logged losses and %zu parameters compared bitwise",
                                            with_terms.log.size(), with_terms.params.size()));
}

void determinism(const fs::path& dir, const std::string& first, const std::string& cli) {
  const auto rerun = dir / "rerun";
  fs::remove_all(rerun);
  std::string how;
  if (!cli.empty()) {
    const std::string cmd = "\"" + cli + "\" run --out \"" + rerun.string() + "\" > \"" + (dir / "rerun.log").string() +
                            "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    how = fmt("command-line rerun (exit %d)", rc);
  } else {
    run_ablation(ExperimentConfig{}, rerun);
    how = "in-process rerun";
  }
  const std::string second = slurp(rerun / "report.csv");
  report(8, !first.empty() && first == second, how + fmt(", report.csv %zu bytes, identical=%s", first.size(),
                                                         first == second ? "yes" : "no"));
}

void paper_reduction() {
  const double r = relative_cer_reduction(11.03, 12.08);
  report(9, std::abs(r - 0.0869) <= 1e-4, fmt("relative_cer_reduction(11.03, 12.08)=%.6f", r));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = "acceptance_out";
  std::string cli;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--out") out = argv[i + 1];
    else if (flag == "--cli") cli = argv[i + 1];
    else {
      std::fprintf(stderr, "usage: acceptance [--out DIR] [--cli PATH]\n");
      return 64;
    }
  }
  fs::remove_all(out);
  fs::create_directories(out);
  try {
    golden_values();
    gradient_suites();
    ctc_oracle();
    scale_invariance();
    snr_fidelity();
    const std::string first = synergy(out / "ablation");
    baseline_equivalence();
    determinism(out, first, cli);
    paper_reduction();
  } catch (const std::exception& e) {
    std::printf("aborted: %s\n", e.what());
    return 99;
  }
  std::printf("%d of 9 criteria failed\n", failures);
  return failures;
}
