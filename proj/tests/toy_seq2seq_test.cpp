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

#include "mgsc/toy_seq2seq.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "mgsc/analysis_metrics.hpp"
#include "mgsc/testing/finite_difference.hpp"

namespace mgsc {
namespace {

TaskConfig tiny_task() {
  TaskConfig t;
  t.vocab = 3;
  t.feature_dim = 5;
  t.min_len = 2;
  t.max_len = 2;
  t.min_dur = 3;
  t.max_dur = 3;
  return t;
}

ObjectiveConfig objective(Variant v, BalancerMode mode = BalancerMode::kFixed) {
  ObjectiveConfig cfg;
  cfg.variant = v;
  cfg.mode = mode;
  cfg.lambda_sent = 0.7;
  cfg.lambda_align = 0.9;
  return cfg;
}

double path_kink_distance(const ModelParams& p, const SyntheticSample& s) {
  const auto out = forward(p, s.features, s.targets);
  double gap = 1e9;
  Vec prev;
  for (std::size_t i = 0; i < out.attention.rows(); ++i) {
    double pi = 0;
    for (std::size_t j = 0; j < out.attention.cols(); ++j) pi += out.attention(i, j) * static_cast<double>(j);
    if (i > 0) gap = std::min(gap, std::abs(pi - prev[0]));
    prev = {pi};
  }
  return gap;
}

TEST(InitParams, FlatLengthIsSumOfDeclaredShapes) {
  const ModelDims dims{5, 4, 3, 1.0};
  // f=5, d=4, v=3, ctc classes 4
  const std::size_t expected = (5 * 4 + 4) + (3 * 4 * 4 + 4) + 3 * 4 + (2 * 4 * 4 + 4) + 2 * 4 * 4 +
                               (8 * 4 + 4) + (4 * 3 + 3) + (4 * 4 + 4);
  EXPECT_EQ(parameter_count(dims), expected);
  EXPECT_EQ(init_params(dims, 1).size(), expected);
}

TEST(InitParams, DeterministicPerSeed) {
  const ModelDims dims;
  EXPECT_EQ(init_params(dims, 9), init_params(dims, 9));
  EXPECT_NE(init_params(dims, 9).flat()[0], init_params(dims, 10).flat()[0]);
}

TEST(InitParams, ScaledUniformBounds) {
  const auto p = init_params(ModelDims{}, 4);
  for (std::size_t k = 0; k < static_cast<std::size_t>(Tensor::kCount); ++k) {
    const auto& s = p.spec(static_cast<Tensor>(k));
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) EXPECT_LE(std::abs(p.flat()[s.offset + i]), bound);
  }
}

TEST(InitParams, InvalidDims) {
  EXPECT_THROW(init_params(ModelDims{5, 1, 3, 1.0}, 1), ValidationError);
  EXPECT_THROW(init_params(ModelDims{5, 4, 1, 1.0}, 1), ValidationError);
}

TEST(Forward, ZeroParamsGiveUniformAttention) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  const ModelParams zero(ModelDims{5, 4, 4, 1.0});
  const auto out = forward(zero, data[0].features, data[0].targets);
  ASSERT_EQ(out.attention.rows(), 3u);
  ASSERT_EQ(out.attention.cols(), 6u);
  for (double a : out.attention.flat()) EXPECT_DOUBLE_EQ(a, 1.0 / 6.0);
}

TEST(Forward, ShapesRowSumsAndDeterminism) {
  TaskConfig task;
  const auto data = generate_dataset(task, 10, 5);
  ModelDims dims;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto p = init_params(dims, seed);
    for (auto& x : p.flat()) x *= 6.0;  // large weights, peaky softmax
    for (const auto& s : data) {
      const auto a = forward(p, s.features, s.targets);
      const auto b = forward(p, s.features, s.targets);
      EXPECT_EQ(a.attention, b.attention);
      EXPECT_EQ(a.dec_logits, b.dec_logits);
      EXPECT_EQ(a.enc_hidden.rows(), s.features.rows());
      EXPECT_EQ(a.dec_hidden.rows(), s.targets.size() + 1);
      EXPECT_EQ(a.dec_logits.cols(), 9u);
      EXPECT_EQ(a.ctc_logits.cols(), 10u);
      for (std::size_t r = 0; r < a.attention.rows(); ++r) {
        const auto row = a.attention.row(r);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-6);
      }
    }
  }
}

TEST(Forward, ShapeErrors) {
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 1);
  EXPECT_THROW(forward(p, Mat(3, 6, 0.0), std::vector<int>{0}), ShapeError);
  EXPECT_THROW(forward(p, Mat(0, 5), std::vector<int>{0}), ShapeError);
  EXPECT_THROW(forward(p, Mat(3, 5, 0.0), std::vector<int>{3}), ShapeError);
}

TEST(LossAndGrad, BaselineReportsButIgnoresConsistencyTerms) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto lg = loss_and_grad(p, data[0], objective(Variant::kBaseline));
  EXPECT_GT(lg.breakdown.l_sentence, 0.0);
  EXPECT_EQ(lg.breakdown.l_total, lg.breakdown.l_asr);
}

TEST(LossAndGrad, FullGradientMatchesFiniteDifferences) {
  const auto data = generate_dataset(tiny_task(), 4, 21);
  const ModelDims dims{5, 4, 4, 1.0};
  for (auto mode : {BalancerMode::kFixed, BalancerMode::kUncertainty}) {
    for (auto v : kAllVariants) {
      int points = 0;
      for (std::uint64_t seed = 1; points < 3; ++seed) {
        const auto p = init_params(dims, seed);
        const auto& s = data[seed % data.size()];
        if (path_kink_distance(p, s) < 1e-2) continue;
        const BalancerState bal{mode, {0.3, -0.2, 0.5}};
        const auto cfg = objective(v, mode);
        const auto lg = loss_and_grad(p, s, cfg, bal);
        auto f = [&](std::span<const double> x) {
          ModelParams q = p;
          std::copy(x.begin(), x.end(), q.flat().begin());
          return loss_and_grad(q, s, cfg, bal).breakdown.l_total;
        };
        EXPECT_LT(testing::max_relative_error(lg.grad.flat(), testing::central_difference(f, p.flat())), 1e-4)
            << to_string(v) << " " << to_string(mode);
        if (mode == BalancerMode::kUncertainty) {
          auto fs = [&](std::span<const double> x) {
            const BalancerState b{mode, {x[0], x[1], x[2]}};
            return loss_and_grad(p, s, cfg, b).breakdown.l_total;
          };
          const auto num = testing::central_difference(fs, bal.log_vars);
          EXPECT_LT(testing::max_relative_error(lg.log_var_grad, num), 1e-6);
        }
        ++points;
      }
    }
  }
}

TEST(LossAndGrad, DuplicateSampleBatchMatchesSingleSample) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto cfg = objective(Variant::kMgsc);
  const auto single = loss_and_grad(p, data[0], cfg);
  const std::vector<SyntheticSample> twice{data[0], data[0]};
  const auto pair = loss_and_grad(p, pad_batch(twice, {0, 1}), cfg);
  EXPECT_NEAR(pair.breakdown.l_total, single.breakdown.l_total, 1e-15);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(pair.grad.flat()[i], single.grad.flat()[i], 1e-15);
}

TEST(LossAndGrad, PaddingIsIgnored) {
  TaskConfig task = tiny_task();
  task.max_len = 4;
  task.max_dur = 5;
  const auto data = generate_dataset(task, 6, 8);
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto cfg = objective(Variant::kMgsc);
  const auto batch = loss_and_grad(p, pad_batch(data, {0, 1, 2, 3, 4, 5}), cfg);
  ModelParams sum = p.zeros_like();
  double total = 0;
  for (const auto& s : data) {
    const auto one = loss_and_grad(p, s, cfg);
    total += one.breakdown.l_total / 6;
    for (std::size_t i = 0; i < p.size(); ++i) sum.flat()[i] += one.grad.flat()[i] / 6;
  }
  EXPECT_NEAR(batch.breakdown.l_total, total, 1e-12);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(batch.grad.flat()[i], sum.flat()[i], 1e-12);
}

TEST(LossAndGrad, ModeMismatchAndEmptyTargets) {
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto data = generate_dataset(tiny_task(), 1, 3);
  EXPECT_THROW(loss_and_grad(p, data[0], objective(Variant::kMgsc, BalancerMode::kUncertainty)), ValidationError);
  SyntheticSample empty{Mat(3, 5, 0.5), {}, {0, 0, 0}};
  EXPECT_THROW(loss_and_grad(p, empty, objective(Variant::kBaseline)), ValidationError);
}

TEST(TrainStep, ZeroLearningRateLeavesParamsUnchanged) {
  const auto data = generate_dataset(tiny_task(), 2, 3);
  auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto before = p;
  BalancerState bal;
  OptimizerState opt;
  OptimizerConfig oc;
  oc.learning_rate = 0.0;
  train_step(p, bal, pad_batch(data, {0, 1}), opt, objective(Variant::kMgsc), oc);
  EXPECT_EQ(p, before);
}

TEST(TrainStep, SgdIsExactUpdate) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto cfg = objective(Variant::kMgsc);
  const auto lg = loss_and_grad(p, data[0], cfg);
  auto expected = p;
  for (std::size_t i = 0; i < p.size(); ++i) expected.flat()[i] = p.flat()[i] - 0.05 * lg.grad.flat()[i];
  BalancerState bal;
  OptimizerState opt;
  OptimizerConfig oc{OptimizerKind::kSgd, 0.05};
  train_step(p, bal, pad_batch(data, {0}), opt, cfg, oc);
  EXPECT_EQ(p, expected);
}

TEST(TrainStep, UncertaintyModeUpdatesLogVariances) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  BalancerState bal{BalancerMode::kUncertainty, {0, 0, 0}};
  OptimizerState opt;
  train_step(p, bal, pad_batch(data, {0}), opt, objective(Variant::kAlign, BalancerMode::kUncertainty), {});
  EXPECT_NE(bal.log_vars[kAsrTerm], 0.0);
  EXPECT_EQ(bal.log_vars[kSentenceTerm], 0.0);
}

TEST(TrainStep, NonFiniteLossRaisesDivergence) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  p.flat()[0] = std::nan("");
  const auto before = p.flat()[1];
  BalancerState bal;
  OptimizerState opt;
  EXPECT_THROW(train_step(p, bal, pad_batch(data, {0}), opt, objective(Variant::kBaseline), {}), DivergenceError);
  EXPECT_EQ(p.flat()[1], before);
  EXPECT_EQ(opt.step, 0u);
}

TEST(TrainStep, TrainingReducesTaskLoss) {
  TaskConfig task;
  const auto data = generate_dataset(task, 20, 31);
  auto p = init_params(ModelDims{task.feature_dim, 16, task.vocab + 1, 1.0}, 5);
  std::vector<std::size_t> all(20);
  std::iota(all.begin(), all.end(), 0);
  const auto full = pad_batch(data, all);
  const auto cfg = objective(Variant::kBaseline);
  const double initial = loss_and_grad(p, full, cfg).breakdown.l_asr;
  BalancerState bal;
  OptimizerState opt;
  for (int step = 0; step < 200; ++step) {
    const auto batches = make_batches(data, 4, static_cast<std::uint64_t>(step / 5));
    train_step(p, bal, batches[static_cast<std::size_t>(step % 5)], opt, cfg, {});
  }
  EXPECT_LT(loss_and_grad(p, full, cfg).breakdown.l_asr, initial);
}

TEST(GreedyDecode, ZeroMaxLenAndDeterminism) {
  const auto data = generate_dataset(tiny_task(), 1, 3);
  const auto p = init_params(ModelDims{5, 4, 4, 1.0}, 2);
  const auto none = greedy_decode(p, data[0].features, 0);
  EXPECT_TRUE(none.tokens.empty());
  EXPECT_EQ(none.attention.rows(), 0u);
  const auto a = greedy_decode(p, data[0].features, 10);
  const auto b = greedy_decode(p, data[0].features, 10);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.attention, b.attention);
  EXPECT_LE(a.tokens.size(), 10u);
  EXPECT_EQ(a.attention.cols(), data[0].features.rows());
}

TEST(GreedyDecode, ConvergedModelCopiesTrainingSamples) {
  TaskConfig task;
  task.vocab = 4;
  task.min_len = 2;
  task.max_len = 3;
  const auto data = generate_dataset(task, 8, 17);
  auto p = init_params(ModelDims{task.feature_dim, 16, task.vocab + 1, 1.0}, 5);
  const auto batch = pad_batch(data, {0, 1, 2, 3, 4, 5, 6, 7});
  BalancerState bal;
  OptimizerState opt;
  for (int step = 0; step < 400; ++step) train_step(p, bal, batch, opt, objective(Variant::kBaseline), {});
  for (const auto& s : data) EXPECT_EQ(cer(greedy_decode(p, s.features, 8).tokens, s.targets), 0.0);
}

TEST(Checkpoint, RoundTripsBitwise) {
  auto p = init_params(ModelDims{5, 4, 4, 0.5}, 77);
  p.flat()[3] = 1.0 / 3.0;
  p.flat()[4] = -0.0;
  p.flat()[5] = 1e-310;
  const auto path = std::filesystem::path(::testing::TempDir()) / "model.ckpt";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  EXPECT_EQ(q, p);
  EXPECT_TRUE(std::signbit(q.flat()[4]));
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto path = std::filesystem::path(::testing::TempDir()) / "bogus.ckpt";
  std::ofstream(path) << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint(path), IoError);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), IoError);
}

TEST(Variant, ParseRoundTrip) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("ctc"), ValidationError);
}

}  // namespace
}  // namespace mgsc
