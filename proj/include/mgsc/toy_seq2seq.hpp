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

// Minimal attention encoder-decoder with exact gradients.
//
// Encoder (per frame t):
//   u_t = tanh(x_t W_in + b_in)
//   h_t = tanh(u_{t-1} M_prev + u_t M_cur + u_{t+1} M_next + b_mix) + s * p_t
// where p_t is a fixed sinusoidal code of t and of the distance to the end and s = pos_scale.
// Decoder (per output step i, teacher-forced on y_{i-1}; y_0 = end symbol):
//   g_i     = tanh(g_{i-1} R + E[y_{i-1}] + o_{i-1} F + b_g)
//   alpha_i = softmax((g_i W_q) . (h_t W_k) / sqrt(d))  over t
//   c_i     = sum_t alpha_i,t h_t
//   o_i     = tanh([g_i, c_i] W_c + b_c)      (decoder hidden state)
//   logits  = o_i W_out + b_out
// CTC head: h_t W_ctc + b_ctc over {blank} + vocabulary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mgsc/asr_objective.hpp"
#include "mgsc/consistency_losses.hpp"
#include "mgsc/data_harness.hpp"
#include "mgsc/error.hpp"
#include "mgsc/loss_balancer.hpp"
#include "mgsc/tensor.hpp"

namespace mgsc {

struct ModelDims {
  int feature_dim = 8;
  int hidden = 16;
  int vocab = 9;  // task tokens + one end symbol (the last id)
  double pos_scale = 1.0;

  int end_symbol() const noexcept { return vocab - 1; }
  int ctc_classes() const noexcept { return vocab + 1; }

  void validate() const {
    if (hidden < 2) throw ValidationError("model: hidden size must be >= 2");
    if (vocab < 2) throw ValidationError("model: vocab must be >= 2");
    if (feature_dim < 1) throw ValidationError("model: feature_dim must be >= 1");
    if (!std::isfinite(pos_scale)) throw ValidationError("model: pos_scale must be finite");
  }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class Tensor : std::size_t {
  kInProj, kInBias, kMixPrev, kMixCur, kMixNext, kMixBias,
  kEmbed, kDecRec, kDecFeed, kDecBias, kQuery, kKey,
  kComb, kCombBias, kOutProj, kOutBias, kCtcProj, kCtcBias,
  kCount
};

inline constexpr std::array<std::string_view, static_cast<std::size_t>(Tensor::kCount)> kTensorNames{
    "in_proj", "in_bias", "mix_prev", "mix_cur", "mix_next", "mix_bias",
    "embed", "dec_rec", "dec_feed", "dec_bias", "query", "key",
    "comb", "comb_bias", "out_proj", "out_bias", "ctc_proj", "ctc_bias"};

struct TensorSpec {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t fan_in = 1;
};

inline std::array<TensorSpec, static_cast<std::size_t>(Tensor::kCount)> tensor_layout(const ModelDims& m) {
  const std::size_t f = m.feature_dim, d = m.hidden, v = m.vocab, c = m.ctc_classes();
  std::array<TensorSpec, static_cast<std::size_t>(Tensor::kCount)> specs{{
      {f, d, 0, f}, {1, d, 0, f},                                // input projection
      {d, d, 0, 3 * d}, {d, d, 0, 3 * d}, {d, d, 0, 3 * d}, {1, d, 0, 3 * d},  // frame mixing
      {v, d, 0, 1},                                              // token embedding
      {d, d, 0, 2 * d}, {d, d, 0, 2 * d}, {1, d, 0, 2 * d},      // decoder recurrence
      {d, d, 0, d}, {d, d, 0, d},                                // attention query / key
      {2 * d, d, 0, 2 * d}, {1, d, 0, 2 * d},                    // state + context combiner
      {d, v, 0, d}, {1, v, 0, d},                                // output projection
      {d, c, 0, d}, {1, c, 0, d},                                // CTC head
  }};
  std::size_t off = 0;
  for (auto& s : specs) {
    s.offset = off;
    off += s.rows * s.cols;
  }
  return specs;
}

inline std::size_t parameter_count(const ModelDims& m) {
  const auto l = tensor_layout(m);
  return l.back().offset + l.back().rows * l.back().cols;
}

/// Read-only row-major view into the flat parameter vector.
struct ConstView {
  const double* p;
  std::size_t rows, cols;
  double operator()(std::size_t r, std::size_t c) const noexcept { return p[r * cols + c]; }
  std::span<const double> row(std::size_t r) const noexcept { return {p + r * cols, cols}; }
};

struct MutView {
  double* p;
  std::size_t rows, cols;
  double& operator()(std::size_t r, std::size_t c) const noexcept { return p[r * cols + c]; }
  std::span<double> row(std::size_t r) const noexcept { return {p + r * cols, cols}; }
};

/// All named tensors stored back to back in one flat vector, so the whole
/// model can be perturbed, updated and serialized uniformly. Gradients use
/// the same type.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelDims& dims, std::uint64_t seed = 0)
      : dims_(dims), seed_(seed), layout_(tensor_layout(dims)), flat_(parameter_count(dims), 0.0) {
    dims_.validate();
  }

  const ModelDims& dims() const noexcept { return dims_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::span<double> flat() noexcept { return flat_; }
  std::span<const double> flat() const noexcept { return flat_; }
  std::size_t size() const noexcept { return flat_.size(); }
  const TensorSpec& spec(Tensor t) const noexcept { return layout_[static_cast<std::size_t>(t)]; }

  ConstView operator[](Tensor t) const noexcept {
    const auto& s = spec(t);
    return {flat_.data() + s.offset, s.rows, s.cols};
  }
  MutView mut(Tensor t) noexcept {
    const auto& s = spec(t);
    return {flat_.data() + s.offset, s.rows, s.cols};
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    std::fill(z.flat_.begin(), z.flat_.end(), 0.0);
    return z;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.dims_ == b.dims_ && a.seed_ == b.seed_ && a.flat_ == b.flat_;
  }

 private:
  ModelDims dims_;
  std::uint64_t seed_ = 0;
  std::array<TensorSpec, static_cast<std::size_t>(Tensor::kCount)> layout_{};
  std::vector<double> flat_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, drawn in
/// layout order from one seeded stream.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p(dims, seed);
  std::mt19937_64 rng(mix_seed(seed, 0x1a17ULL));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t t = 0; t < static_cast<std::size_t>(Tensor::kCount); ++t) {
    const auto& s = p.spec(static_cast<Tensor>(t));
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    for (std::size_t k = 0; k < s.rows * s.cols; ++k) p.flat()[s.offset + k] = scale * unit(rng);
  }
  return p;
}

namespace detail {

/// Sinusoidal code of frame t in an utterance of n frames. The first half of
/// the dimensions encodes t, the second half n-1-t (distance to the end).
inline double position_code(std::size_t t, std::size_t n, std::size_t k, std::size_t d) {
  const std::size_t half = d / 2;
  const std::size_t pos = k < half ? t : n - 1 - t;
  const std::size_t j = k < half ? k : k - half;
  const std::size_t width = k < half ? half : d - half;
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(width));
  const double a = static_cast<double>(pos) * rate;
  return j % 2 == 0 ? std::sin(a) : std::cos(a);
}

/// out += x W
inline void add_xw(std::span<const double> x, ConstView w, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += xr * wr[c];
  }
}

/// Backprop through out = x W: dW += x^T dy, dx += dy W^T (dx may be empty).
inline void back_xw(std::span<const double> x, ConstView w, std::span<const double> dy, MutView dw,
                    std::span<double> dx) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const auto wr = w.row(r);
    const auto dwr = dw.row(r);
    double acc = 0;
    for (std::size_t c = 0; c < w.cols; ++c) {
      dwr[c] += x[r] * dy[c];
      acc += wr[c] * dy[c];
    }
    if (!dx.empty()) dx[r] += acc;
  }
}

inline void add_to(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct EncoderCache {
  Mat x;        // (T, F)
  Mat in_act;   // tanh of the input projection
  Mat u;        // in_act + position code
  Mat h;        // encoder hidden states, tanh of the mixing layer
  Mat keys;     // h W_k
};

inline EncoderCache encode(const ModelParams& p, const Mat& x) {
  const auto& dims = p.dims();
  const std::size_t d = dims.hidden;
  if (x.rows() < 1) throw ShapeError("forward: input has no frames");
  if (x.cols() != static_cast<std::size_t>(dims.feature_dim)) {
    throw ShapeError("forward: features have " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(dims.feature_dim));
  }
  const std::size_t n = x.rows();
  EncoderCache e{x, Mat(n, d), Mat(n, d), Mat(n, d), Mat(n, d)};
  for (std::size_t t = 0; t < n; ++t) {
    auto u = e.u.row(t);
    std::copy(p[Tensor::kInBias].row(0).begin(), p[Tensor::kInBias].row(0).end(), u.begin());
    add_xw(x.row(t), p[Tensor::kInProj], u);
    for (std::size_t k = 0; k < d; ++k) {
      e.in_act(t, k) = std::tanh(u[k]);
      u[k] = e.in_act(t, k) + dims.pos_scale * position_code(t, n, k, d);
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    auto z = e.h.row(t);
    std::copy(p[Tensor::kMixBias].row(0).begin(), p[Tensor::kMixBias].row(0).end(), z.begin());
    if (t > 0) add_xw(e.u.row(t - 1), p[Tensor::kMixPrev], z);
    add_xw(e.u.row(t), p[Tensor::kMixCur], z);
    if (t + 1 < n) add_xw(e.u.row(t + 1), p[Tensor::kMixNext], z);
    for (auto& v : z) v = std::tanh(v);
    add_xw(e.h.row(t), p[Tensor::kKey], e.keys.row(t));
  }
  return e;
}

struct DecoderStep {
  int prev_token = 0;
  Vec g, q, alpha, c, o, logits;
};

inline DecoderStep decoder_step(const ModelParams& p, const EncoderCache& e, int prev_token,
                                std::span<const double> g_prev, std::span<const double> o_prev) {
  const std::size_t d = p.dims().hidden;
  const std::size_t n = e.h.rows();
  DecoderStep s;
  s.prev_token = prev_token;
  s.g.assign(p[Tensor::kDecBias].row(0).begin(), p[Tensor::kDecBias].row(0).end());
  add_to(s.g, p[Tensor::kEmbed].row(static_cast<std::size_t>(prev_token)));
  add_xw(g_prev, p[Tensor::kDecRec], s.g);
  add_xw(o_prev, p[Tensor::kDecFeed], s.g);
  for (auto& v : s.g) v = std::tanh(v);

  s.q.assign(d, 0.0);
  add_xw(s.g, p[Tensor::kQuery], s.q);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Vec scores(n);
  for (std::size_t t = 0; t < n; ++t) scores[t] = dot<double>(s.q, e.keys.row(t)) * inv_sqrt_d;
  s.alpha.assign(n, 0.0);
  softmax_into<double>(scores, s.alpha);

  s.c.assign(d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) s.c[k] += s.alpha[t] * e.h(t, k);
  }
  Vec gc(2 * d);
  std::copy(s.g.begin(), s.g.end(), gc.begin());
  std::copy(s.c.begin(), s.c.end(), gc.begin() + static_cast<long>(d));
  s.o.assign(p[Tensor::kCombBias].row(0).begin(), p[Tensor::kCombBias].row(0).end());
  add_xw(gc, p[Tensor::kComb], s.o);
  for (auto& v : s.o) v = std::tanh(v);

  s.logits.assign(p[Tensor::kOutBias].row(0).begin(), p[Tensor::kOutBias].row(0).end());
  add_xw(s.o, p[Tensor::kOutProj], s.logits);
  return s;
}

}  // namespace detail

/// Everything the consistency objective needs from one teacher-forced pass.
struct ForwardOutput {
  Mat enc_hidden;  // (t_in, d)
  Mat dec_hidden;  // (t_out, d), t_out = |targets| + 1 (end symbol)
  Mat attention;   // (t_out, t_in), rows sum to 1
  Mat dec_logits;  // (t_out, vocab)
  Mat ctc_logits;  // (t_in, vocab + 1)
};

namespace detail {

struct ForwardCache {
  EncoderCache enc;
  std::vector<DecoderStep> steps;
};

inline void check_targets(const ModelDims& dims, std::span<const int> targets) {
  for (int y : targets) {
    if (y < 0 || y >= dims.end_symbol()) {
      throw ShapeError("forward: target " + std::to_string(y) + " outside the task vocabulary [0," +
                       std::to_string(dims.end_symbol() - 1) + "]");
    }
  }
}

inline ForwardCache run_forward(const ModelParams& p, const Mat& features, std::span<const int> targets) {
  check_targets(p.dims(), targets);
  ForwardCache c{encode(p, features), {}};
  const std::size_t d = p.dims().hidden;
  Vec g(d, 0.0), o(d, 0.0);
  int prev = p.dims().end_symbol();
  for (std::size_t i = 0; i <= targets.size(); ++i) {
    c.steps.push_back(decoder_step(p, c.enc, prev, g, o));
    g = c.steps.back().g;
    o = c.steps.back().o;
    if (i < targets.size()) prev = targets[i];
  }
  return c;
}

inline ForwardOutput collect(const ModelParams& p, const ForwardCache& c) {
  const std::size_t d = p.dims().hidden, n = c.enc.h.rows(), m = c.steps.size();
  const std::size_t v = p.dims().vocab, cc = p.dims().ctc_classes();
  ForwardOutput out{c.enc.h, Mat(m, d), Mat(m, n), Mat(m, v), Mat(n, cc)};
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(c.steps[i].o.begin(), c.steps[i].o.end(), out.dec_hidden.row(i).begin());
    std::copy(c.steps[i].alpha.begin(), c.steps[i].alpha.end(), out.attention.row(i).begin());
    std::copy(c.steps[i].logits.begin(), c.steps[i].logits.end(), out.dec_logits.row(i).begin());
  }
  for (std::size_t t = 0; t < n; ++t) {
    auto r = out.ctc_logits.row(t);
    std::copy(p[Tensor::kCtcBias].row(0).begin(), p[Tensor::kCtcBias].row(0).end(), r.begin());
    add_xw(c.enc.h.row(t), p[Tensor::kCtcProj], r);
  }
  return out;
}

/// Upstream gradients with respect to the ForwardOutput fields.
struct OutputGrads {
  Mat dec_logits;  // empty = none
  Mat ctc_logits;
  Mat attention;
  Mat enc_hidden;
  Mat dec_hidden;
};

inline void backward(const ModelParams& p, const ForwardCache& c, const OutputGrads& up, ModelParams& grad) {
  const std::size_t d = p.dims().hidden;
  const std::size_t n = c.enc.h.rows();
  const std::size_t m = c.steps.size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Mat dh(n, d, 0.0);
  Mat dkeys(n, d, 0.0);
  if (!up.enc_hidden.empty()) dh = up.enc_hidden;

  if (!up.ctc_logits.empty()) {
    for (std::size_t t = 0; t < n; ++t) {
      add_to(grad.mut(Tensor::kCtcBias).row(0), up.ctc_logits.row(t));
      back_xw(c.enc.h.row(t), p[Tensor::kCtcProj], up.ctc_logits.row(t), grad.mut(Tensor::kCtcProj), dh.row(t));
    }
  }

  Vec dg_carry(d, 0.0), do_carry(d, 0.0);
  for (std::size_t i = m; i-- > 0;) {
    const auto& s = c.steps[i];
    Vec d_o = do_carry;
    if (!up.dec_logits.empty()) {
      add_to(grad.mut(Tensor::kOutBias).row(0), up.dec_logits.row(i));
      back_xw(s.o, p[Tensor::kOutProj], up.dec_logits.row(i), grad.mut(Tensor::kOutProj), d_o);
    }
    if (!up.dec_hidden.empty()) add_to(d_o, up.dec_hidden.row(i));

    Vec d_pre_o(d);
    for (std::size_t k = 0; k < d; ++k) d_pre_o[k] = d_o[k] * (1.0 - s.o[k] * s.o[k]);
    add_to(grad.mut(Tensor::kCombBias).row(0), d_pre_o);
    Vec gc(2 * d), d_gc(2 * d, 0.0);
    std::copy(s.g.begin(), s.g.end(), gc.begin());
    std::copy(s.c.begin(), s.c.end(), gc.begin() + static_cast<long>(d));
    back_xw(gc, p[Tensor::kComb], d_pre_o, grad.mut(Tensor::kComb), d_gc);
    Vec d_g(d_gc.begin(), d_gc.begin() + static_cast<long>(d));
    const std::span<const double> d_ctx(d_gc.data() + d, d);

    Vec d_alpha(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      d_alpha[t] = dot<double>(d_ctx, c.enc.h.row(t));
      for (std::size_t k = 0; k < d; ++k) dh(t, k) += s.alpha[t] * d_ctx[k];
    }
    if (!up.attention.empty()) add_to(d_alpha, up.attention.row(i));
    const double mean = dot<double>(s.alpha, d_alpha);
    Vec d_q(d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double d_score = s.alpha[t] * (d_alpha[t] - mean) * inv_sqrt_d;
      if (d_score == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        d_q[k] += d_score * c.enc.keys(t, k);
        dkeys(t, k) += d_score * s.q[k];
      }
    }
    back_xw(s.g, p[Tensor::kQuery], d_q, grad.mut(Tensor::kQuery), d_g);

    add_to(d_g, dg_carry);
    Vec d_pre_g(d);
    for (std::size_t k = 0; k < d; ++k) d_pre_g[k] = d_g[k] * (1.0 - s.g[k] * s.g[k]);
    add_to(grad.mut(Tensor::kDecBias).row(0), d_pre_g);
    add_to(grad.mut(Tensor::kEmbed).row(static_cast<std::size_t>(s.prev_token)), d_pre_g);
    std::fill(dg_carry.begin(), dg_carry.end(), 0.0);
    std::fill(do_carry.begin(), do_carry.end(), 0.0);
    if (i > 0) {
      back_xw(c.steps[i - 1].g, p[Tensor::kDecRec], d_pre_g, grad.mut(Tensor::kDecRec), dg_carry);
      back_xw(c.steps[i - 1].o, p[Tensor::kDecFeed], d_pre_g, grad.mut(Tensor::kDecFeed), do_carry);
    }
    // At i == 0 the recurrent inputs are zero vectors: no weight gradient.
  }

  for (std::size_t t = 0; t < n; ++t) {
    back_xw(c.enc.h.row(t), p[Tensor::kKey], dkeys.row(t), grad.mut(Tensor::kKey), dh.row(t));
  }

  Mat du(n, d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    Vec dz(d);
    for (std::size_t k = 0; k < d; ++k) {
      const double a = c.enc.h(t, k);
      dz[k] = dh(t, k) * (1.0 - a * a);
    }
    add_to(grad.mut(Tensor::kMixBias).row(0), dz);
    if (t > 0) back_xw(c.enc.u.row(t - 1), p[Tensor::kMixPrev], dz, grad.mut(Tensor::kMixPrev), du.row(t - 1));
    back_xw(c.enc.u.row(t), p[Tensor::kMixCur], dz, grad.mut(Tensor::kMixCur), du.row(t));
    if (t + 1 < n) back_xw(c.enc.u.row(t + 1), p[Tensor::kMixNext], dz, grad.mut(Tensor::kMixNext), du.row(t + 1));
  }
  for (std::size_t t = 0; t < n; ++t) {
    Vec da(d);
    for (std::size_t k = 0; k < d; ++k) da[k] = du(t, k) * (1.0 - c.enc.in_act(t, k) * c.enc.in_act(t, k));
    add_to(grad.mut(Tensor::kInBias).row(0), da);
    back_xw(c.enc.x.row(t), p[Tensor::kInProj], da, grad.mut(Tensor::kInProj), {});
  }
}

}  // namespace detail

/// Teacher-forced forward pass over one utterance.
inline ForwardOutput forward(const ModelParams& params, const Mat& features, std::span<const int> targets) {
  return detail::collect(params, detail::run_forward(params, features, targets));
}

// ---------------------------------------------------------------------------
// Objective

enum class Variant { kBaseline, kAlign, kSentence, kMgsc };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::kBaseline, Variant::kAlign, Variant::kSentence,
                                                     Variant::kMgsc};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kAlign: return "align";
    case Variant::kSentence: return "sentence";
    case Variant::kMgsc: return "mgsc";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  throw ValidationError("unknown variant '" + std::string(s) + "' (expected baseline|align|sentence|mgsc)");
}

inline bool uses_sentence(Variant v) { return v == Variant::kSentence || v == Variant::kMgsc; }
inline bool uses_align(Variant v) { return v == Variant::kAlign || v == Variant::kMgsc; }

struct ObjectiveConfig {
  Variant variant = Variant::kMgsc;
  double ctc_weight = kDefaultCtcWeight;
  double lambda_sent = 0.1;
  double lambda_align = 0.1;
  BalancerMode mode = BalancerMode::kFixed;
  /// When false the consistency terms are never computed (pure task-loss
  /// path); only meaningful for the baseline variant.
  bool construct_consistency = true;
};

/// Per-term gradient coefficients dl_total/dL_k for the current state.
inline std::array<double, 3> term_coefficients(const ObjectiveConfig& cfg, const BalancerState& balancer) {
  const bool s = uses_sentence(cfg.variant), a = uses_align(cfg.variant);
  if (cfg.mode == BalancerMode::kFixed) {
    return {1.0, s ? cfg.lambda_sent : 0.0, a ? cfg.lambda_align : 0.0};
  }
  return {std::exp(-balancer.log_vars[kAsrTerm]), s ? std::exp(-balancer.log_vars[kSentenceTerm]) : 0.0,
          a ? std::exp(-balancer.log_vars[kAlignTerm]) : 0.0};
}

namespace detail {

/// Loss terms for one utterance; accumulates scale * d(sum_k coef_k L_k)/d params into `grad`.
inline LossBreakdown sample_loss_and_grad(const ModelParams& p, const Mat& features, std::span<const int> targets,
                                          const ObjectiveConfig& cfg, const std::array<double, 3>& coef,
                                          double scale, ModelParams& grad) {
  if (targets.empty()) throw ValidationError("loss_and_grad: empty target sequence");
  const auto cache = run_forward(p, features, targets);
  const auto out = collect(p, cache);
  for (const Mat* m : {&out.dec_logits, &out.ctc_logits}) {
    if (!std::all_of(m->flat().begin(), m->flat().end(), [](double x) { return std::isfinite(x); })) {
      throw DivergenceError("non-finite output logits");
    }
  }
  const int end = p.dims().end_symbol();

  LabelSequence dec_targets(targets.begin(), targets.end());
  dec_targets.push_back(end);
  LabelSequence ctc_labels(targets.begin(), targets.end());
  for (auto& l : ctc_labels) l += 1;  // blank occupies class 0

  const auto ce = cross_entropy_loss(out.dec_logits, dec_targets);
  auto ctc = ctc_loss_from_logits(out.ctc_logits, ctc_labels, kDefaultBlank);
  const double per_label = 1.0 / static_cast<double>(ctc_labels.size());
  ctc.value *= per_label;
  for (auto& g : ctc.grad.flat()) g *= per_label;
  const auto asr = hybrid_asr_loss(ce, ctc, cfg.ctc_weight);

  LossBreakdown b;
  b.l_asr = asr.value;
  OutputGrads up;
  up.dec_logits = asr.grad_decoder;
  up.ctc_logits = asr.grad_ctc;
  for (auto& g : up.dec_logits.flat()) g *= coef[kAsrTerm] * scale;
  for (auto& g : up.ctc_logits.flat()) g *= coef[kAsrTerm] * scale;

  if (cfg.construct_consistency) {
    const auto m_enc = global_average_pool(out.enc_hidden);
    const auto m_dec = global_average_pool(out.dec_hidden);
    const auto sent = sentence_loss(m_enc, m_dec);
    const auto align = alignment_loss(AttentionMatrix<double>(out.attention));
    b.l_sentence = sent.value;
    b.l_align = align.value;

    if (coef[kSentenceTerm] != 0.0) {
      const double w = coef[kSentenceTerm] * scale;
      const double inv_in = 1.0 / static_cast<double>(out.enc_hidden.rows());
      const double inv_out = 1.0 / static_cast<double>(out.dec_hidden.rows());
      up.enc_hidden = Mat(out.enc_hidden.rows(), out.enc_hidden.cols());
      up.dec_hidden = Mat(out.dec_hidden.rows(), out.dec_hidden.cols());
      for (std::size_t t = 0; t < up.enc_hidden.rows(); ++t) {
        for (std::size_t k = 0; k < up.enc_hidden.cols(); ++k) up.enc_hidden(t, k) = w * sent.grad_enc[k] * inv_in;
      }
      for (std::size_t t = 0; t < up.dec_hidden.rows(); ++t) {
        for (std::size_t k = 0; k < up.dec_hidden.cols(); ++k) up.dec_hidden(t, k) = w * sent.grad_dec[k] * inv_out;
      }
    }
    if (coef[kAlignTerm] != 0.0) {
      up.attention = align.grad;
      for (auto& g : up.attention.flat()) g *= coef[kAlignTerm] * scale;
    }
  }
  backward(p, cache, up, grad);
  return b;
}

}  // namespace detail

struct LossAndGrad {
  LossBreakdown breakdown;  // batch means; l_total is the balanced objective
  ModelParams grad;         // d l_total / d params
  std::array<double, 3> log_var_grad{};  // uncertainty mode only
};

/// Mean-reduced objective and gradient over a padded batch. Padding is
/// stripped via the masks before any computation.
inline LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch, const ObjectiveConfig& cfg,
                                 const BalancerState& balancer = {}) {
  if (batch.size() == 0) throw ValidationError("loss_and_grad: empty batch");
  if (cfg.mode != balancer.mode) throw ValidationError("loss_and_grad: objective and balancer modes differ");
  const auto coef = term_coefficients(cfg, balancer);
  LossAndGrad out{{}, params.zeros_like(), {}};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossBreakdown sum;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto b = detail::sample_loss_and_grad(params, batch.frames_of(k), batch.targets_of(k), cfg, coef, inv_b,
                                                out.grad);
    sum.l_asr += b.l_asr;
    sum.l_sentence += b.l_sentence;
    sum.l_align += b.l_align;
  }
  const double l_asr = sum.l_asr * inv_b, l_sent = sum.l_sentence * inv_b, l_align = sum.l_align * inv_b;
  if (cfg.mode == BalancerMode::kFixed) {
    if (cfg.construct_consistency) {
      out.breakdown = combine_fixed(l_asr, l_sent, l_align, coef[kSentenceTerm], coef[kAlignTerm]).breakdown;
    } else {
      out.breakdown = {l_asr, 0.0, 0.0, l_asr};
    }
  } else {
    const std::array<bool, 3> active{true, uses_sentence(cfg.variant), uses_align(cfg.variant)};
    const auto u = combine_uncertainty({l_asr, l_sent, l_align}, balancer, active);
    out.breakdown = {l_asr, l_sent, l_align, u.l_total};
    out.log_var_grad = u.d_log_vars;
  }
  return out;
}

/// Convenience: single-utterance objective.
inline LossAndGrad loss_and_grad(const ModelParams& params, const SyntheticSample& sample, const ObjectiveConfig& cfg,
                                 const BalancerState& balancer = {}) {
  return loss_and_grad(params, pad_batch({sample}, {0}), cfg, balancer);
}

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rescale the joint gradient (parameters and log-variances) to at most
  /// this L2 norm; 0 disables clipping.
  double clip_norm = 0.0;
};

/// First/second moments over [model parameters..., 3 log-variances].
struct OptimizerState {
  Vec m, v;
  std::uint64_t step = 0;
};

/// One optimizer update on the mean batch objective. Parameters and, in
/// uncertainty mode, the balancer log-variances are updated in place.
/// Throws DivergenceError (leaving all state untouched) on a non-finite loss.
inline LossBreakdown train_step(ModelParams& params, BalancerState& balancer, const Batch& batch,
                                OptimizerState& opt, const ObjectiveConfig& cfg, const OptimizerConfig& ocfg) {
  LossAndGrad lg;
  try {
    lg = loss_and_grad(params, batch, cfg, balancer);
  } catch (const DivergenceError& e) {
    throw DivergenceError("optimizer step " + std::to_string(opt.step) + ": " + e.what());
  }
  const auto& b = lg.breakdown;
  if (!std::isfinite(b.l_total) || !std::isfinite(b.l_asr)) {
    std::ostringstream os;
    os << "non-finite loss at optimizer step " << opt.step << ": l_asr=" << b.l_asr << " l_sentence=" << b.l_sentence
       << " l_align=" << b.l_align << " l_total=" << b.l_total;
    throw DivergenceError(os.str());
  }
  const std::size_t np = params.size();
  const bool learn_vars = balancer.mode == BalancerMode::kUncertainty;
  double clip = 1.0;
  if (ocfg.clip_norm > 0.0) {
    double sq = 0;
    for (double g : lg.grad.flat()) sq += g * g;
    if (learn_vars) {
      for (double g : lg.log_var_grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > ocfg.clip_norm) clip = ocfg.clip_norm / norm;
  }
  auto update = [&](double& x, double g, std::size_t slot) {
    if (ocfg.kind == OptimizerKind::kSgd) {
      x -= ocfg.learning_rate * g;
      return;
    }
    opt.m[slot] = ocfg.beta1 * opt.m[slot] + (1.0 - ocfg.beta1) * g;
    opt.v[slot] = ocfg.beta2 * opt.v[slot] + (1.0 - ocfg.beta2) * g * g;
    const double t = static_cast<double>(opt.step);
    const double m_hat = opt.m[slot] / (1.0 - std::pow(ocfg.beta1, t));
    const double v_hat = opt.v[slot] / (1.0 - std::pow(ocfg.beta2, t));
    x -= ocfg.learning_rate * m_hat / (std::sqrt(v_hat) + ocfg.epsilon);
  };
  if (opt.m.size() != np + 3) {
    opt.m.assign(np + 3, 0.0);
    opt.v.assign(np + 3, 0.0);
  }
  ++opt.step;
  auto flat = params.flat();
  const auto g = lg.grad.flat();
  for (std::size_t i = 0; i < np; ++i) update(flat[i], clip * g[i], i);
  if (learn_vars) {
    for (std::size_t k = 0; k < 3; ++k) update(balancer.log_vars[k], clip * lg.log_var_grad[k], np + k);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Inference

struct DecodeResult {
  LabelSequence tokens;  // end symbol stripped
  Mat attention;         // (steps, t_in); includes the step that emitted the end symbol
  Mat dec_hidden;        // (steps, d)
};

/// Free-running argmax decoding until the end symbol or `max_len` steps.
inline DecodeResult greedy_decode(const ModelParams& p, const Mat& features, std::size_t max_len) {
  const auto enc = detail::encode(p, features);
  const std::size_t d = p.dims().hidden;
  const int end = p.dims().end_symbol();
  std::vector<detail::DecoderStep> steps;
  Vec g(d, 0.0), o(d, 0.0);
  int prev = end;
  LabelSequence tokens;
  for (std::size_t i = 0; i < max_len; ++i) {
    auto s = detail::decoder_step(p, enc, prev, g, o);
    const int best = static_cast<int>(std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
    g = s.g;
    o = s.o;
    steps.push_back(std::move(s));
    if (best == end) break;
    tokens.push_back(best);
    prev = best;
  }
  DecodeResult r{std::move(tokens), Mat(steps.size(), enc.h.rows()), Mat(steps.size(), d)};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    std::copy(steps[i].alpha.begin(), steps[i].alpha.end(), r.attention.row(i).begin());
    std::copy(steps[i].o.begin(), steps[i].o.end(), r.dec_hidden.row(i).begin());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: text, exact hexadecimal floating point.
//
//   mgsc-checkpoint 1
//   dims <feature_dim> <hidden> <vocab> <pos_scale>
//   seed <seed>
//   tensor <name> <rows> <cols>
//   <rows*cols values, one row per line>
//   ...

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw IoError("cannot parse number '" + tok + "'");
  return v;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
  const auto& d = p.dims();
  os << "mgsc-checkpoint 1\n";
  os << "dims " << d.feature_dim << ' ' << d.hidden << ' ' << d.vocab << ' ' << hex_double(d.pos_scale) << '\n';
  os << "seed " << p.seed() << '\n';
  for (std::size_t t = 0; t < static_cast<std::size_t>(Tensor::kCount); ++t) {
    const auto view = p[static_cast<Tensor>(t)];
    os << "tensor " << kTensorNames[t] << ' ' << view.rows << ' ' << view.cols << '\n';
    for (std::size_t r = 0; r < view.rows; ++r) {
      for (std::size_t c = 0; c < view.cols; ++c) os << (c ? " " : "") << hex_double(view(r, c));
      os << '\n';
    }
  }
  if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  std::string magic, key, tok;
  int version = 0;
  if (!(is >> magic >> version) || magic != "mgsc-checkpoint" || version != 1) {
    throw IoError("load_checkpoint: " + path.string() + " is not a version-1 checkpoint");
  }
  ModelDims dims;
  if (!(is >> key >> dims.feature_dim >> dims.hidden >> dims.vocab >> tok) || key != "dims") {
    throw IoError("load_checkpoint: bad dims line");
  }
  dims.pos_scale = parse_double(tok);
  std::uint64_t seed = 0;
  if (!(is >> key >> seed) || key != "seed") throw IoError("load_checkpoint: bad seed line");
  ModelParams p(dims, seed);
  for (std::size_t t = 0; t < static_cast<std::size_t>(Tensor::kCount); ++t) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (!(is >> key >> name >> rows >> cols) || key != "tensor" || name != kTensorNames[t]) {
      throw IoError("load_checkpoint: expected tensor " + std::string(kTensorNames[t]));
    }
    auto view = p.mut(static_cast<Tensor>(t));
    if (rows != view.rows || cols != view.cols) {
      throw IoError("load_checkpoint: tensor " + name + " has shape " + shape_string(rows, cols) + ", expected " +
                    shape_string(view.rows, view.cols));
    }
    for (std::size_t k = 0; k < rows * cols; ++k) {
      if (!(is >> tok)) throw IoError("load_checkpoint: tensor " + name + " truncated");
      view.p[k] = parse_double(tok);
    }
  }
  return p;
}

}  // namespace mgsc
