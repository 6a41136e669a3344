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

// Consistency regularizers on top of an encoder-decoder:
//  * token level: hinge penalty on regressions of the expected alignment path
//    derived from the cross-attention matrix;
//  * sentence level: 1 - cos between time-pooled encoder and decoder states.
// Every loss returns its value together with the analytic gradient.

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgsc/error.hpp"
#include "mgsc/tensor.hpp"

namespace mgsc {

inline constexpr double kRowSumTolerance = 1e-6;
inline constexpr double kNormFloor = 1e-8;

/// Row-stochastic (t_out x t_in) cross-attention weights.
template <std::floating_point T>
class AttentionMatrix {
 public:
  /// Validates shape, entry range and row sums; the error names the first
  /// offending row.
  explicit AttentionMatrix(Matrix<T> weights) : w_(std::move(weights)) {
    if (w_.rows() < 1 || w_.cols() < 1) {
      throw ValidationError("attention matrix must be at least 1x1, got " +
                            shape_string(w_.rows(), w_.cols()));
    }
    for (std::size_t i = 0; i < w_.rows(); ++i) {
      T sum = 0;
      for (T a : w_.row(i)) {
        if (!(a >= T(0) && a <= T(1))) {
          throw ValidationError("attention row " + std::to_string(i) +
                                " has an entry outside [0,1]");
        }
        sum += a;
      }
      if (std::abs(sum - T(1)) > T(kRowSumTolerance)) {
        throw ValidationError("attention row " + std::to_string(i) + " sums to " +
                              std::to_string(sum) + ", expected 1");
      }
    }
  }

  std::size_t t_out() const noexcept { return w_.rows(); }
  std::size_t t_in() const noexcept { return w_.cols(); }
  const Matrix<T>& weights() const noexcept { return w_; }

 private:
  Matrix<T> w_;
};

/// Expected attended frame index per output step; entries lie in [0, t_in-1].
template <std::floating_point T>
struct AlignmentPath {
  std::vector<T> positions;
  std::size_t size() const noexcept { return positions.size(); }
};

template <std::floating_point T>
struct LossWithGrad {
  T value = 0;
  Matrix<T> grad;
};

template <std::floating_point T>
struct SentenceLoss {
  T value = 0;
  std::vector<T> grad_enc;
  std::vector<T> grad_dec;
};

/// pi_i = sum_j attn[i][j] * j, with 0-based column index j.
template <std::floating_point T>
AlignmentPath<T> expected_alignment_path(const AttentionMatrix<T>& attn) {
  const auto& w = attn.weights();
  AlignmentPath<T> path{std::vector<T>(w.rows(), T(0))};
  for (std::size_t i = 0; i < w.rows(); ++i) {
    T p = 0;
    for (std::size_t j = 0; j < w.cols(); ++j) p += w(i, j) * static_cast<T>(j);
    path.positions[i] = p;
  }
  return path;
}

namespace detail {

/// Hinge alignment loss on an arbitrary (t_out x t_in) matrix; no
/// stochasticity check, so finite-difference probes may leave the simplex.
template <std::floating_point T>
LossWithGrad<T> alignment_loss_raw(const Matrix<T>& w) {
  LossWithGrad<T> out{T(0), Matrix<T>(w.rows(), w.cols(), T(0))};
  const std::size_t n = w.rows();
  if (n < 2) return out;

  std::vector<T> path(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) path[i] += w(i, j) * static_cast<T>(j);
  }
  const T scale = T(1) / static_cast<T>(n - 1);
  std::vector<T> d_path(n, T(0));
  T total = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const T regress = path[i - 1] - path[i];
    if (regress > T(0)) {
      total += regress;
      d_path[i - 1] += scale;
      d_path[i] -= scale;
    }
  }
  out.value = total * scale;
  for (std::size_t i = 0; i < n; ++i) {
    if (d_path[i] == T(0)) continue;
    for (std::size_t j = 0; j < w.cols(); ++j) out.grad(i, j) = d_path[i] * static_cast<T>(j);
  }
  return out;
}

}  // namespace detail

/// Mean hinge over consecutive regressions of the expected path,
///   value = 1/(t_out-1) * sum_{i>=1} max(0, pi_{i-1} - pi_i).
/// A single-step output cannot regress: value and gradient are both zero.
/// At the kink (pi_{i-1} == pi_i) the zero subgradient is used.
template <std::floating_point T>
LossWithGrad<T> alignment_loss(const AttentionMatrix<T>& attn) {
  return detail::alignment_loss_raw(attn.weights());
}

/// Mean over the time axis of a (t x d) hidden-state matrix.
template <std::floating_point T>
std::vector<T> global_average_pool(const Matrix<T>& hidden) {
  if (hidden.rows() == 0) throw ValidationError("global_average_pool: empty sequence");
  std::vector<T> m(hidden.cols(), T(0));
  for (std::size_t t = 0; t < hidden.rows(); ++t) {
    for (std::size_t k = 0; k < hidden.cols(); ++k) m[k] += hidden(t, k);
  }
  const T inv = T(1) / static_cast<T>(hidden.rows());
  for (auto& v : m) v *= inv;
  return m;
}

template <std::floating_point T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const T na = norm2(a);
  const T nb = norm2(b);
  if (!(na > T(kNormFloor)) || !(nb > T(kNormFloor))) {
    throw DegenerateRepresentationError("cosine_similarity: representation norm below floor");
  }
  return dot(a, b) / (na * nb);
}

/// 1 - cos(m_enc, m_dec), gradients with respect to both sides.
template <std::floating_point T>
SentenceLoss<T> sentence_loss(std::span<const T> m_enc, std::span<const T> m_dec) {
  if (m_enc.size() != m_dec.size()) {
    throw ShapeError("sentence_loss: representation sizes " + std::to_string(m_enc.size()) +
                     " and " + std::to_string(m_dec.size()) + " differ");
  }
  const T ne = norm2(m_enc);
  const T nd = norm2(m_dec);
  if (!(ne > T(kNormFloor))) {
    throw DegenerateRepresentationError("sentence_loss: encoder representation has near-zero norm");
  }
  if (!(nd > T(kNormFloor))) {
    throw DegenerateRepresentationError("sentence_loss: decoder representation has near-zero norm");
  }
  const T c = dot(m_enc, m_dec) / (ne * nd);
  SentenceLoss<T> out;
  out.value = T(1) - c;
  out.grad_enc.resize(m_enc.size());
  out.grad_dec.resize(m_dec.size());
  // d cos / d u = v/(|u||v|) - cos * u/|u|^2
  for (std::size_t k = 0; k < m_enc.size(); ++k) {
    out.grad_enc[k] = -(m_dec[k] / (ne * nd) - c * m_enc[k] / (ne * ne));
    out.grad_dec[k] = -(m_enc[k] / (ne * nd) - c * m_dec[k] / (nd * nd));
  }
  return out;
}

template <std::floating_point T>
SentenceLoss<T> sentence_loss(const std::vector<T>& m_enc, const std::vector<T>& m_dec) {
  return sentence_loss(std::span<const T>(m_enc), std::span<const T>(m_dec));
}

}  // namespace mgsc
