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

#pragma once

// Ablation harness: trains each (variant, seed) pair on the synthetic task,
// evaluates greedy-decoding CER on clean and noisy copies of a held-out set,
// and writes the report files plus per-run logs and checkpoints.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mgsc/analysis_metrics.hpp"
#include "mgsc/data_harness.hpp"
#include "mgsc/error.hpp"
#include "mgsc/loss_balancer.hpp"
#include "mgsc/toy_seq2seq.hpp"

namespace mgsc {

// Default task for the ablation: longer token durations, wider frames, and
// targets that mostly follow a fixed successor table.
inline TaskConfig default_experiment_task() {
  TaskConfig t;
  t.min_dur = 3;
  t.max_dur = 6;
  t.feature_dim = 16;
  t.successor_prob = 0.8;
  return t;
}

struct ExperimentConfig {
  TaskConfig task = default_experiment_task();
  std::size_t train_size = 200;
  std::size_t test_size = 100;
  std::uint64_t train_seed = 11;
  std::uint64_t test_seed = 22;
  double train_snr_db = std::numeric_limits<double>::infinity();

  int hidden = 24;
  double pos_scale = 1.0;

  double ctc_weight = kDefaultCtcWeight;
  BalancerMode balancer = BalancerMode::kFixed;
  double lambda_sent = 0.001;
  double lambda_align = 0.1;

  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-2;
  double lr_final = 1e-3;  // learning rate reached (linearly) at the last step
  double clip_norm = 1.0;
  std::size_t steps = 3000;
  std::size_t batch_size = 8;
  std::size_t log_every = 10;

  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Condition> conditions = default_conditions();
  std::size_t workers = 1;

  ModelDims model_dims() const { return {task.feature_dim, hidden, task.vocab + 1, pos_scale}; }

  ObjectiveConfig objective(Variant v) const {
    ObjectiveConfig o;
    o.variant = v;
    o.ctc_weight = ctc_weight;
    o.lambda_sent = lambda_sent;
    o.lambda_align = lambda_align;
    o.mode = balancer;
    return o;
  }

  OptimizerConfig optimizer_config() const {
    OptimizerConfig o;
    o.kind = optimizer;
    o.learning_rate = learning_rate;
    o.clip_norm = clip_norm;
    return o;
  }

  std::size_t max_decode_len() const { return 2 * static_cast<std::size_t>(task.max_len) + 2; }

  void validate() const {
    task.validate();
    model_dims().validate();
    if (seeds.empty()) throw ValidationError("config: seeds must be non-empty");
    if (variants.empty()) throw ValidationError("config: variants must be non-empty");
    if (conditions.empty()) throw ValidationError("config: conditions must be non-empty");
    if (batch_size < 1) throw ValidationError("config: train.batch_size must be >= 1");
    if (train_size < 1 || test_size < 1) throw ValidationError("config: dataset sizes must be >= 1");
    if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ValidationError("config: ctc_weight must lie in [0,1]");
    if (!(lambda_sent >= 0.0) || !(lambda_align >= 0.0)) throw ValidationError("config: lambdas must be >= 0");
    if (!(learning_rate >= 0.0) || !(lr_final >= 0.0)) throw ValidationError("config: learning rates must be >= 0");
    if (!(clip_norm >= 0.0)) throw ValidationError("config: optimizer.clip_norm must be >= 0");
    if (workers < 1) throw ValidationError("config: experiment.workers must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_snr(const std::string& s) {
  if (s == "clean" || s == "inf") return std::numeric_limits<double>::infinity();
  std::string t = s;
  if (t.size() > 2 && t.substr(t.size() - 2) == "dB") t.resize(t.size() - 2);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("invalid SNR '" + s + "'");
  }
}

inline std::string format_snr(double snr) {
  if (std::isinf(snr)) return "clean";
  std::ostringstream os;
  os << snr;
  return os.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': cannot parse '" + v + "'");
  }
}

}  // namespace detail

/// Applies one `key=value` setting.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  const std::map<std::string, std::function<void(const std::string&)>> setters{
      {"task.vocab", [&](auto& v) { c.task.vocab = parse_number<int>(key, v); }},
      {"task.min_len", [&](auto& v) { c.task.min_len = parse_number<int>(key, v); }},
      {"task.max_len", [&](auto& v) { c.task.max_len = parse_number<int>(key, v); }},
      {"task.min_dur", [&](auto& v) { c.task.min_dur = parse_number<int>(key, v); }},
      {"task.max_dur", [&](auto& v) { c.task.max_dur = parse_number<int>(key, v); }},
      {"task.feature_dim", [&](auto& v) { c.task.feature_dim = parse_number<int>(key, v); }},
      {"task.jitter", [&](auto& v) { c.task.jitter = parse_number<double>(key, v); }},
      {"task.successor_prob", [&](auto& v) { c.task.successor_prob = parse_number<double>(key, v); }},
      {"task.embedding_seed", [&](auto& v) { c.task.embedding_seed = parse_number<std::uint64_t>(key, v); }},
      {"data.train_size", [&](auto& v) { c.train_size = parse_number<std::size_t>(key, v); }},
      {"data.test_size", [&](auto& v) { c.test_size = parse_number<std::size_t>(key, v); }},
      {"data.train_seed", [&](auto& v) { c.train_seed = parse_number<std::uint64_t>(key, v); }},
      {"data.test_seed", [&](auto& v) { c.test_seed = parse_number<std::uint64_t>(key, v); }},
      {"data.train_snr", [&](auto& v) { c.train_snr_db = detail::parse_snr(v); }},
      {"model.hidden", [&](auto& v) { c.hidden = parse_number<int>(key, v); }},
      {"model.pos_scale", [&](auto& v) { c.pos_scale = parse_number<double>(key, v); }},
      {"objective.ctc_weight", [&](auto& v) { c.ctc_weight = parse_number<double>(key, v); }},
      {"balancer.mode", [&](auto& v) { c.balancer = parse_balancer_mode(v); }},
      {"balancer.lambda_sent", [&](auto& v) { c.lambda_sent = parse_number<double>(key, v); }},
      {"balancer.lambda_align", [&](auto& v) { c.lambda_align = parse_number<double>(key, v); }},
      {"optimizer.kind",
       [&](auto& v) {
         if (v == "adam") c.optimizer = OptimizerKind::kAdam;
         else if (v == "sgd") c.optimizer = OptimizerKind::kSgd;
         else throw ValidationError("optimizer.kind must be adam or sgd");
       }},
      {"optimizer.lr", [&](auto& v) { c.learning_rate = parse_number<double>(key, v); }},
      {"optimizer.lr_final", [&](auto& v) { c.lr_final = parse_number<double>(key, v); }},
      {"optimizer.clip_norm", [&](auto& v) { c.clip_norm = parse_number<double>(key, v); }},
      {"train.steps", [&](auto& v) { c.steps = parse_number<std::size_t>(key, v); }},
      {"train.batch_size", [&](auto& v) { c.batch_size = parse_number<std::size_t>(key, v); }},
      {"train.log_every", [&](auto& v) { c.log_every = parse_number<std::size_t>(key, v); }},
      {"experiment.variants",
       [&](auto& v) {
         c.variants.clear();
         for (const auto& s : detail::split_list(v)) c.variants.push_back(parse_variant(s));
       }},
      {"experiment.seeds",
       [&](auto& v) {
         c.seeds.clear();
         for (const auto& s : detail::split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(key, s));
       }},
      {"experiment.conditions",
       [&](auto& v) {
         c.conditions.clear();
         for (const auto& s : detail::split_list(v)) {
           const double snr = detail::parse_snr(s);
           c.conditions.push_back({condition_name(snr), snr});
         }
       }},
      {"experiment.workers", [&](auto& v) { c.workers = parse_number<std::size_t>(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second(value);
}

/// Flat `key=value` text; `#` starts a comment, blank lines are ignored.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in);
}

namespace detail {
// Shortest decimal form that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
}  // namespace detail

/// Every key with its current value, in the same format parse_config reads.
inline std::string format_config(const ExperimentConfig& c) {
  std::ostringstream os;
  auto join = [](const auto& items, auto fmt) {
    std::string s;
    for (const auto& x : items) s += (s.empty() ? "" : ",") + fmt(x);
    return s;
  };
  os << "task.vocab=" << c.task.vocab << "\ntask.min_len=" << c.task.min_len << "\ntask.max_len=" << c.task.max_len
     << "\ntask.min_dur=" << c.task.min_dur << "\ntask.max_dur=" << c.task.max_dur
     << "\ntask.feature_dim=" << c.task.feature_dim << "\ntask.jitter=" << detail::shortest(c.task.jitter)
     << "\ntask.successor_prob=" << detail::shortest(c.task.successor_prob)
     << "\ntask.embedding_seed=" << c.task.embedding_seed << "\ndata.train_size=" << c.train_size
     << "\ndata.test_size=" << c.test_size << "\ndata.train_seed=" << c.train_seed
     << "\ndata.test_seed=" << c.test_seed << "\ndata.train_snr=" << detail::format_snr(c.train_snr_db)
     << "\nmodel.hidden=" << c.hidden << "\nmodel.pos_scale=" << detail::shortest(c.pos_scale)
     << "\nobjective.ctc_weight=" << detail::shortest(c.ctc_weight) << "\nbalancer.mode=" << to_string(c.balancer)
     << "\nbalancer.lambda_sent=" << detail::shortest(c.lambda_sent) << "\nbalancer.lambda_align=" << detail::shortest(c.lambda_align)
     << "\noptimizer.kind=" << (c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd")
     << "\noptimizer.lr=" << detail::shortest(c.learning_rate) << "\noptimizer.lr_final=" << detail::shortest(c.lr_final)
     << "\noptimizer.clip_norm=" << detail::shortest(c.clip_norm) << "\ntrain.steps=" << c.steps << "\ntrain.batch_size=" << c.batch_size
     << "\ntrain.log_every=" << c.log_every
     << "\nexperiment.variants=" << join(c.variants, [](Variant v) { return to_string(v); })
     << "\nexperiment.seeds=" << join(c.seeds, [](std::uint64_t s) { return std::to_string(s); })
     << "\nexperiment.conditions="
     << join(c.conditions, [](const Condition& k) { return detail::format_snr(k.snr_db); })
     << "\nexperiment.workers=" << c.workers << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

struct TrainLogEntry {
  std::size_t step = 0;
  LossBreakdown losses;
};

struct TrainResult {
  ModelParams params;
  BalancerState balancer;
  std::vector<TrainLogEntry> log;
  bool failed = false;
  std::string failure;
};

/// Batch stream for one seed: a fresh deterministic shuffle every epoch.
/// Depends only on (samples, batch size, seed), never on the variant.
class BatchStream {
 public:
  BatchStream(const std::vector<SyntheticSample>& samples, std::size_t batch_size, std::uint64_t seed)
      : samples_(samples), batch_size_(batch_size), seed_(seed) {}

  const Batch& next() {
    if (pos_ == epoch_.size()) {
      epoch_ = make_batches(samples_, batch_size_, mix_seed(seed_, epoch_index_++));
      pos_ = 0;
    }
    return epoch_[pos_++];
  }

 private:
  const std::vector<SyntheticSample>& samples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_index_ = 0;
  std::vector<Batch> epoch_;
  std::size_t pos_ = 0;
};

/// Applies the configured training-time noise (none by default).
inline std::vector<SyntheticSample> training_set(const ExperimentConfig& cfg) {
  auto train = generate_dataset(cfg.task, cfg.train_size, cfg.train_seed);
  if (!std::isinf(cfg.train_snr_db)) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      train[i].features =
          inject_noise(train[i].features, {cfg.train_snr_db, noise_seed(cfg.train_seed, i, cfg.train_snr_db)});
    }
  }
  return train;
}

inline TrainResult train_model(const ExperimentConfig& cfg, Variant variant, std::uint64_t seed,
                               const std::vector<SyntheticSample>& train, ObjectiveConfig objective) {
  objective.variant = variant;
  TrainResult r{init_params(cfg.model_dims(), seed), BalancerState{cfg.balancer, {0, 0, 0}}, {}, false, {}};
  OptimizerState opt;
  BatchStream stream(train, cfg.batch_size, seed);
  auto ocfg = cfg.optimizer_config();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double frac = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
    ocfg.learning_rate = cfg.learning_rate + frac * (cfg.lr_final - cfg.learning_rate);
    try {
      const auto b = train_step(r.params, r.balancer, stream.next(), opt, objective, ocfg);
      if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) r.log.push_back({step, b});
    } catch (const Error& e) {
      r.failed = true;
      r.failure = e.what();
      break;
    }
  }
  return r;
}

struct ConditionEval {
  double cer = 0;             // corpus-level: total edits / total reference tokens
  double violation_rate = 0;  // mean over utterances, free-running attention
};

struct EvalResult {
  std::vector<ConditionEval> per_condition;
  double representation_gap = 0;  // teacher-forced, clean test set
};

/// Test features under one condition; noise depends on (seed, sample, SNR).
inline Mat condition_features(const SyntheticSample& s, std::size_t index, const Condition& c, std::uint64_t seed) {
  if (c.clean()) return s.features;
  return inject_noise(s.features, {c.snr_db, noise_seed(seed, index, c.snr_db)});
}

inline std::pair<std::vector<double>, std::vector<double>> pooled_representations(const ModelParams& p,
                                                                                  const SyntheticSample& s) {
  const auto out = forward(p, s.features, s.targets);
  return {global_average_pool(out.enc_hidden), global_average_pool(out.dec_hidden)};
}

inline EvalResult evaluate(const ExperimentConfig& cfg, const ModelParams& params,
                           const std::vector<SyntheticSample>& test, std::uint64_t seed) {
  EvalResult r;
  const int end = params.dims().end_symbol();
  for (const auto& cond : cfg.conditions) {
    std::size_t edits = 0, ref_tokens = 0;
    double violations = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto dec = greedy_decode(params, condition_features(test[i], i, cond, seed), cfg.max_decode_len());
      const auto hyp = strip_symbol(dec.tokens, end);
      const auto ref = strip_symbol(test[i].targets, end);
      edits += edit_distance(hyp, ref);
      ref_tokens += ref.size();
      if (dec.attention.rows() > 0) {
        violations += monotonicity_violation_rate(expected_alignment_path(AttentionMatrix<double>(dec.attention)));
      }
    }
    r.per_condition.push_back({static_cast<double>(edits) / static_cast<double>(ref_tokens),
                               violations / static_cast<double>(test.size())});
  }
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (const auto& s : test) pairs.push_back(pooled_representations(params, s));
  r.representation_gap = representation_gap(pairs);
  return r;
}

struct RunResult {
  Variant variant = Variant::kBaseline;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  EvalResult eval;
  std::vector<TrainLogEntry> log;
  BalancerState balancer;
  std::filesystem::path checkpoint;
};

/// Headline numbers: medians over the successful seeds of each variant.
struct VariantSummary {
  double noisy_average_cer = 0;  // median over seeds of per-seed noisy averages
  double violation_rate_0db = 0;
  double representation_gap = 0;
  std::size_t successful_runs = 0;
};

struct AblationOutcome {
  AblationReport report;  // median CER per (variant, condition)
  std::vector<RunResult> runs;
  std::map<std::string, VariantSummary> summary;
};

inline std::string losses_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  os << "step,l_asr,l_sentence,l_align,l_total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", e.step, e.losses.l_asr, e.losses.l_sentence,
                  e.losses.l_align, e.losses.l_total);
    os << buf;
  }
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

inline std::string run_name(Variant v, std::uint64_t seed) { return to_string(v) + "_seed" + std::to_string(seed); }

namespace detail {

inline std::optional<std::size_t> zero_db_index(const std::vector<Condition>& conds) {
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (!conds[i].clean() && conds[i].snr_db == 0.0) return i;
  }
  return std::nullopt;
}

inline double noisy_average(const std::vector<Condition>& conds, const EvalResult& e) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (conds[i].clean()) continue;
    sum += e.per_condition[i].cer;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Trains and evaluates every (variant, seed) pair. With a non-empty `out_dir`
/// writes report.csv, report.txt, reduction.csv, analysis.csv, config.txt and
/// runs/<variant>_seed<N>/{losses.csv, model.ckpt}.
inline AblationOutcome run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {},
                                    const std::function<void(const std::string&)>& progress = {}) {
  cfg.validate();
  const auto train = training_set(cfg);
  const auto test = generate_dataset(cfg.task, cfg.test_size, cfg.test_seed);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir / "runs");

  std::vector<RunResult> runs;
  for (auto v : cfg.variants) {
    for (auto s : cfg.seeds) runs.push_back({v, s, false, {}, {}, {}, {}, {}});
  }

  std::mutex progress_mu;
  auto execute = [&](RunResult& run) {
    auto tr = train_model(cfg, run.variant, run.seed, train, cfg.objective(run.variant));
    run.log = std::move(tr.log);
    run.balancer = tr.balancer;
    run.failed = tr.failed;
    run.failure = tr.failure;
    if (!run.failed) {
      try {
        run.eval = evaluate(cfg, tr.params, test, run.seed);
      } catch (const Error& e) {
        run.failed = true;
        run.failure = std::string("evaluation: ") + e.what();
      }
    }
    if (!out_dir.empty()) {
      const auto dir = out_dir / "runs" / run_name(run.variant, run.seed);
      std::filesystem::create_directories(dir);
      write_text(dir / "losses.csv", losses_csv(run.log));
      run.checkpoint = dir / "model.ckpt";
      save_checkpoint(tr.params, run.checkpoint);
      if (run.failed) write_text(dir / "FAILED", run.failure + "\n");
    }
    if (progress) {
      std::lock_guard lock(progress_mu);
      progress(run_name(run.variant, run.seed) + (run.failed ? " FAILED: " + run.failure : " done"));
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) execute(runs[i]);
  };
  const std::size_t n_workers = std::min(cfg.workers, runs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  AblationOutcome outcome;
  outcome.runs = std::move(runs);
  outcome.report.conditions = cfg.conditions;
  const auto zero_db = detail::zero_db_index(cfg.conditions);
  for (auto v : cfg.variants) {
    const auto name = to_string(v);
    outcome.report.variants.push_back(name);
    std::vector<std::vector<double>> per_cond(cfg.conditions.size());
    std::vector<double> noisy, viol, gap;
    for (const auto& r : outcome.runs) {
      if (r.variant != v || r.failed) continue;
      for (std::size_t c = 0; c < cfg.conditions.size(); ++c) per_cond[c].push_back(r.eval.per_condition[c].cer);
      noisy.push_back(detail::noisy_average(cfg.conditions, r.eval));
      if (zero_db) viol.push_back(r.eval.per_condition[*zero_db].violation_rate);
      gap.push_back(r.eval.representation_gap);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> row;
    for (auto& pc : per_cond) row.push_back(pc.empty() ? nan : median(pc));
    outcome.report.cer[name] = row;
    outcome.summary[name] = {noisy.empty() ? nan : median(noisy), viol.empty() ? nan : median(viol),
                             gap.empty() ? nan : median(gap), gap.size()};
  }

  if (!out_dir.empty()) {
    write_text(out_dir / "report.csv", outcome.report.to_csv());
    std::string table = outcome.report.to_table();
    for (const auto& r : outcome.runs) {
      if (r.failed) table += "FAILED " + run_name(r.variant, r.seed) + ": " + r.failure + "\n";
    }
    write_text(out_dir / "report.txt", table);
    write_text(out_dir / "reduction.csv", outcome.report.reduction_csv());
    std::ostringstream an;
    an << "variant,median_noisy_avg_cer,median_violation_rate_0dB,median_representation_gap,successful_runs\n";
    char buf[200];
    for (const auto& v : outcome.report.variants) {
      const auto& s = outcome.summary.at(v);
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%zu\n", v.c_str(), 100.0 * s.noisy_average_cer,
                    s.violation_rate_0db, s.representation_gap, s.successful_runs);
      an << buf;
    }
    write_text(out_dir / "analysis.csv", an.str());
    write_text(out_dir / "config.txt", format_config(cfg));
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Analysis dumps

/// One CSV per sample: `attn_<i>.csv` with a header line `rows <t_out> cols
/// <t_in>`, the attention rows, then `path,...` and `violation_rate,<r>`.
inline std::vector<std::filesystem::path> dump_attention(const ModelParams& params,
                                                         const std::vector<SyntheticSample>& samples,
                                                         const std::filesystem::path& out_dir, std::size_t max_len) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> files;
  char buf[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto dec = greedy_decode(params, samples[i].features, max_len);
    std::ostringstream os;
    os << "rows " << dec.attention.rows() << " cols " << dec.attention.cols() << '\n';
    for (std::size_t r = 0; r < dec.attention.rows(); ++r) {
      for (std::size_t c = 0; c < dec.attention.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", dec.attention(r, c));
        os << (c ? "," : "") << buf;
      }
      os << '\n';
    }
    double rate = 0;
    os << "path";
    if (dec.attention.rows() > 0) {
      const auto path = expected_alignment_path(AttentionMatrix<double>(dec.attention));
      for (double p : path.positions) {
        std::snprintf(buf, sizeof buf, "%.17g", p);
        os << ',' << buf;
      }
      rate = monotonicity_violation_rate(path);
    }
    std::snprintf(buf, sizeof buf, "%.17g", rate);
    os << "\nviolation_rate," << buf << '\n';
    files.push_back(out_dir / ("attn_" + std::to_string(i) + ".csv"));
    write_text(files.back(), os.str());
  }
  return files;
}

/// One line per sample: d values of M_enc, d values of M_dec, then 1 - cos.
inline std::string dump_representations(const ModelParams& params, const std::vector<SyntheticSample>& samples) {
  std::ostringstream os;
  char buf[64];
  for (const auto& s : samples) {
    const auto [enc, dec] = pooled_representations(params, s);
    for (double v : enc) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      os << buf;
    }
    for (double v : dec) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", 1.0 - cosine_similarity<double>(enc, dec));
    os << buf << '\n';
  }
  return os.str();
}

}  // namespace mgsc
