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

#include <array>
#include <cmath>
#include <string>

#include "mgsc/error.hpp"

namespace mgsc {

/// Scalar components of the combined objective
///   l_total = l_asr + lambda_sent * l_sentence + lambda_align * l_align
/// (or its uncertainty-weighted counterpart).
struct LossBreakdown {
  double l_asr = 0;
  double l_sentence = 0;
  double l_align = 0;
  double l_total = 0;
};

enum class BalancerMode { kFixed, kUncertainty };

inline std::string to_string(BalancerMode m) {
  return m == BalancerMode::kFixed ? "fixed" : "uncertainty";
}

inline BalancerMode parse_balancer_mode(const std::string& s) {
  if (s == "fixed") return BalancerMode::kFixed;
  if (s == "uncertainty") return BalancerMode::kUncertainty;
  throw ValidationError("unknown balancer mode '" + s + "' (expected fixed|uncertainty)");
}

/// Index order of the three loss terms everywhere in the balancer.
enum LossTerm : std::size_t { kAsrTerm = 0, kSentenceTerm = 1, kAlignTerm = 2 };

/// Learnable log-variances s_k, one per loss term. Unused in fixed mode.
struct BalancerState {
  BalancerMode mode = BalancerMode::kFixed;
  std::array<double, 3> log_vars{0.0, 0.0, 0.0};
};

struct FixedCombination {
  LossBreakdown breakdown;
  /// d l_total / d L_k, to be applied to each term's gradient.
  std::array<double, 3> coefficients{};
};

inline FixedCombination combine_fixed(double l_asr, double l_sentence, double l_align,
                                      double lambda_sent, double lambda_align) {
  if (!(lambda_sent >= 0.0) || !(lambda_align >= 0.0)) {
    throw ValidationError("combine_fixed: lambda weights must be non-negative");
  }
  if (!std::isfinite(l_asr) || !std::isfinite(l_sentence) || !std::isfinite(l_align)) {
    throw ValidationError("combine_fixed: component losses must be finite");
  }
  FixedCombination out;
  out.breakdown = {l_asr, l_sentence, l_align,
                   l_asr + lambda_sent * l_sentence + lambda_align * l_align};
  out.coefficients = {1.0, lambda_sent, lambda_align};
  return out;
}

struct UncertaintyCombination {
  double l_total = 0;
  std::array<double, 3> d_losses{};    // exp(-s_k)
  std::array<double, 3> d_log_vars{};  // 1 - exp(-s_k) * L_k
};

/// Homoscedastic-uncertainty weighting: l_total = sum_k exp(-s_k) L_k + s_k.
/// `active` masks terms out entirely (they contribute neither loss nor s_k).
inline UncertaintyCombination combine_uncertainty(const std::array<double, 3>& losses,
                                                  const BalancerState& state,
                                                  const std::array<bool, 3>& active = {true, true, true}) {
  if (state.mode != BalancerMode::kUncertainty) {
    throw ValidationError("combine_uncertainty: balancer is not in uncertainty mode");
  }
  UncertaintyCombination out;
  for (std::size_t k = 0; k < 3; ++k) {
    if (!std::isfinite(state.log_vars[k])) {
      throw ValidationError("combine_uncertainty: log-variance " + std::to_string(k) + " is not finite");
    }
    if (!active[k]) continue;
    const double w = std::exp(-state.log_vars[k]);
    out.l_total += w * losses[k] + state.log_vars[k];
    out.d_losses[k] = w;
    out.d_log_vars[k] = 1.0 - w * losses[k];
  }
  return out;
}

}  // namespace mgsc
