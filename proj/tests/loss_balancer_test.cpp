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

#include "mgsc/loss_balancer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mgsc/testing/finite_difference.hpp"

namespace mgsc {
namespace {

TEST(CombineFixed, ZeroLambdasReduceToTaskLoss) {
  const auto c = combine_fixed(1.25, 0.7, 3.0, 0.0, 0.0);
  EXPECT_EQ(c.breakdown.l_total, 1.25);
  EXPECT_EQ(c.coefficients, (std::array<double, 3>{1.0, 0.0, 0.0}));
}

TEST(CombineFixed, Examples) {
  EXPECT_NEAR(combine_fixed(1.0, 0.5, 0.2, 1.0, 1.0).breakdown.l_total, 1.7, 1e-15);
  EXPECT_EQ(combine_fixed(1.0, 0.0, 0.0, 2.0, 0.0).breakdown.l_total, 1.0);
  const auto c = combine_fixed(1.0, 0.5, 0.2, 0.1, 0.3);
  EXPECT_EQ(c.breakdown.l_sentence, 0.5);
  EXPECT_EQ(c.breakdown.l_align, 0.2);
  EXPECT_EQ(c.coefficients, (std::array<double, 3>{1.0, 0.1, 0.3}));
}

TEST(CombineFixed, Errors) {
  EXPECT_THROW(combine_fixed(1, 1, 1, -0.1, 0), ValidationError);
  EXPECT_THROW(combine_fixed(1, 1, 1, 0, -1e-9), ValidationError);
  EXPECT_THROW(combine_fixed(std::nan(""), 1, 1, 0, 0), ValidationError);
  EXPECT_THROW(combine_fixed(1, INFINITY, 1, 0, 0), ValidationError);
}

TEST(CombineFixed, Linear) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = u(rng), s = u(rng) / 2.5, l = u(rng), ls = u(rng), la = u(rng);
    EXPECT_NEAR(combine_fixed(2 * a, 2 * s, 2 * l, ls, la).breakdown.l_total,
                2 * combine_fixed(a, s, l, ls, la).breakdown.l_total, 1e-12);
  }
}

TEST(CombineUncertainty, UnitWeightsAtZeroLogVariance) {
  const BalancerState st{BalancerMode::kUncertainty, {0, 0, 0}};
  const auto c = combine_uncertainty({1.0, 0.5, 0.25}, st);
  EXPECT_EQ(c.l_total, 1.75);
  EXPECT_EQ(c.d_losses, (std::array<double, 3>{1, 1, 1}));
}

TEST(CombineUncertainty, StationaryAtLogOfLoss) {
  const BalancerState st{BalancerMode::kUncertainty, {0, 0, 0}};
  EXPECT_EQ(combine_uncertainty({1.0, 0, 0}, st, {true, false, false}).d_log_vars[0], 0.0);
  const BalancerState st2{BalancerMode::kUncertainty, {std::log(2.5), 0, 0}};
  EXPECT_NEAR(combine_uncertainty({2.5, 0, 0}, st2).d_log_vars[0], 0.0, 1e-15);
}

TEST(CombineUncertainty, InactiveTermsContributeNothing) {
  const BalancerState st{BalancerMode::kUncertainty, {0.3, -0.5, 0.7}};
  const auto c = combine_uncertainty({1.0, 2.0, 3.0}, st, {true, false, false});
  EXPECT_NEAR(c.l_total, std::exp(-0.3) + 0.3, 1e-15);
  EXPECT_EQ(c.d_losses[1], 0.0);
  EXPECT_EQ(c.d_log_vars[2], 0.0);
}

TEST(CombineUncertainty, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lu(0, 4), su(-2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x{lu(rng), lu(rng), lu(rng), su(rng), su(rng), su(rng)};
    auto f = [](std::span<const double> p) {
      const BalancerState st{BalancerMode::kUncertainty, {p[3], p[4], p[5]}};
      return combine_uncertainty({p[0], p[1], p[2]}, st).l_total;
    };
    const auto numeric = testing::central_difference(f, x);
    const BalancerState st{BalancerMode::kUncertainty, {x[3], x[4], x[5]}};
    const auto g = combine_uncertainty({x[0], x[1], x[2]}, st);
    std::vector<double> analytic(g.d_losses.begin(), g.d_losses.end());
    analytic.insert(analytic.end(), g.d_log_vars.begin(), g.d_log_vars.end());
    EXPECT_LT(testing::max_relative_error(analytic, numeric), 1e-6);
  }
}

TEST(CombineUncertainty, WeightsStayPositive) {
  for (double s : {-50.0, -1.0, 0.0, 1.0, 50.0, 700.0}) {
    const BalancerState st{BalancerMode::kUncertainty, {s, s, s}};
    for (double w : combine_uncertainty({1, 1, 1}, st).d_losses) EXPECT_GT(w, 0.0);
  }
}

TEST(CombineUncertainty, Errors) {
  EXPECT_THROW(combine_uncertainty({1, 1, 1}, BalancerState{}), ValidationError);
  const BalancerState bad{BalancerMode::kUncertainty, {0, std::nan(""), 0}};
  EXPECT_THROW(combine_uncertainty({1, 1, 1}, bad), ValidationError);
}

TEST(BalancerMode, ParseRoundTrip) {
  for (auto m : {BalancerMode::kFixed, BalancerMode::kUncertainty}) EXPECT_EQ(parse_balancer_mode(to_string(m)), m);
  EXPECT_THROW(parse_balancer_mode("adaptive"), ValidationError);
}

}  // namespace
}  // namespace mgsc
