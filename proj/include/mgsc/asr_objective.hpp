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

// Task loss for the encoder-decoder: token-level cross-entropy on the
// attention decoder, CTC negative log-likelihood on the encoder head, and
// their weighted hybrid. All losses are per-token means over one utterance.

#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mgsc/consistency_losses.hpp"
#include "mgsc/error.hpp"
#include "mgsc/tensor.hpp"

namespace mgsc {

inline constexpr int kDefaultBlank = 0;
inline constexpr double kDefaultCtcWeight = 0.3;
inline constexpr double kLogProbTolerance = 1e-6;

using LabelSequence = std::vector<int>;

/// Mean over tokens of -log softmax(logits_t)[target_t]; gradient with
/// respect to the logits.
template <std::floating_point T>
LossWithGrad<T> cross_entropy_loss(const Matrix<T>& logits, std::span<const int> targets) {
  if (logits.rows() != targets.size()) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (logits.cols() < 2) throw ValidationError("cross_entropy_loss: vocabulary size must be >= 2");
  LossWithGrad<T> out{T(0), Matrix<T>(logits.rows(), logits.cols())};
  if (targets.empty()) return out;
  const T inv_n = T(1) / static_cast<T>(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int y = targets[t];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw ValidationError("cross_entropy_loss: target " + std::to_string(y) + " out of range");
    }
    const T lse = log_sum_exp(logits.row(t));
    out.value += lse - logits(t, y);
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      out.grad(t, k) = std::exp(logits(t, k) - lse) * inv_n;
    }
    out.grad(t, y) -= inv_n;
  }
  out.value *= inv_n;
  return out;
}

/// Minimum number of frames CTC needs for `labels`: one per label plus one
/// separating blank per adjacent repeat.
inline std::size_t ctc_min_frames(std::span<const int> labels) {
  std::size_t need = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) need += labels[i] == labels[i - 1];
  return need;
}

namespace detail {

/// Forward-backward CTC on arbitrary log-scores. No normalization checks,
/// so it can be probed with finite differences.
template <std::floating_point T>
LossWithGrad<T> ctc_forward_backward(const Matrix<T>& lp, std::span<const int> labels, int blank) {
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  const std::size_t frames = lp.rows();
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];

  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  Matrix<T> alpha(frames, states, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (states > 1) alpha(0, 1) = lp(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      T a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[s]);
    }
  }

  Matrix<T> beta(frames, states, kNegInf);
  beta(frames - 1, states - 1) = lp(frames - 1, ext[states - 1]);
  if (states > 1) beta(frames - 1, states - 2) = lp(frames - 1, ext[states - 2]);
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      T b = beta(t + 1, s);
      if (s + 1 < states) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, ext[s]);
    }
  }

  T log_p = alpha(frames - 1, states - 1);
  if (states > 1) log_p = log_add(log_p, alpha(frames - 1, states - 2));

  LossWithGrad<T> out{-log_p, Matrix<T>(frames, lp.cols(), T(0))};
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      const T la = alpha(t, s) + beta(t, s);
      if (la == kNegInf) continue;
      // alpha and beta both include the emission at t.
      out.grad(t, ext[s]) -= std::exp(la - lp(t, ext[s]) - log_p);
    }
  }
  return out;
}

}  // namespace detail

/// CTC negative log-likelihood of `labels` given per-frame log-probabilities
/// (t x v, log-softmax applied). The gradient is with respect to
/// `frame_log_probs`, i.e. minus the per-frame symbol occupancy.
template <std::floating_point T>
LossWithGrad<T> ctc_loss(const Matrix<T>& frame_log_probs, std::span<const int> labels,
                         int blank_index = kDefaultBlank) {
  const std::size_t v = frame_log_probs.cols();
  if (v < 2) throw ValidationError("ctc_loss: vocabulary size must be >= 2");
  if (blank_index < 0 || static_cast<std::size_t>(blank_index) >= v) {
    throw ValidationError("ctc_loss: blank index out of range");
  }
  if (labels.empty()) throw ValidationError("ctc_loss: empty label sequence");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= v || l == blank_index) {
      throw ValidationError("ctc_loss: invalid label " + std::to_string(l));
    }
  }
  for (std::size_t t = 0; t < frame_log_probs.rows(); ++t) {
    const T lse = log_sum_exp(frame_log_probs.row(t));
    if (!(std::abs(lse) <= T(kLogProbTolerance))) {
      throw ValidationError("ctc_loss: frame " + std::to_string(t) +
                            " is not a normalized log-distribution");
    }
  }
  const std::size_t need = ctc_min_frames(labels);
  if (frame_log_probs.rows() < need) {
    throw InfeasibleAlignmentError("ctc_loss: " + std::to_string(labels.size()) +
                                   " labels need at least " + std::to_string(need) + " frames, got " +
                                   std::to_string(frame_log_probs.rows()));
  }
  return detail::ctc_forward_backward(frame_log_probs, labels, blank_index);
}

/// CTC on raw logits: applies log-softmax and chains the gradient through it.
template <std::floating_point T>
LossWithGrad<T> ctc_loss_from_logits(const Matrix<T>& logits, std::span<const int> labels,
                                     int blank_index = kDefaultBlank) {
  const Matrix<T> lp = log_softmax_rows(logits);
  auto out = ctc_loss(lp, labels, blank_index);
  for (std::size_t t = 0; t < lp.rows(); ++t) {
    T g_sum = 0;
    for (T g : out.grad.row(t)) g_sum += g;
    for (std::size_t k = 0; k < lp.cols(); ++k) {
      out.grad(t, k) -= std::exp(lp(t, k)) * g_sum;
    }
  }
  return out;
}

template <std::floating_point T>
struct HybridLoss {
  T value = 0;
  Matrix<T> grad_decoder;  // w.r.t. the cross-entropy input
  Matrix<T> grad_ctc;      // w.r.t. the CTC input
};

/// (1 - ctc_weight) * ce + ctc_weight * ctc; gradients scaled accordingly.
template <std::floating_point T>
HybridLoss<T> hybrid_asr_loss(const LossWithGrad<T>& ce, const LossWithGrad<T>& ctc, T ctc_weight) {
  if (!(ctc_weight >= T(0) && ctc_weight <= T(1))) {
    throw ValidationError("hybrid_asr_loss: ctc_weight must lie in [0,1]");
  }
  const T w_ce = T(1) - ctc_weight;
  HybridLoss<T> out{w_ce * ce.value + ctc_weight * ctc.value, ce.grad, ctc.grad};
  for (auto& g : out.grad_decoder.flat()) g *= w_ce;
  for (auto& g : out.grad_ctc.flat()) g *= ctc_weight;
  return out;
}

}  // namespace mgsc
