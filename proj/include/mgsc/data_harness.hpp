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

// Synthetic monotonic transduction task standing in for speech: each target
// token emits a run of noisy copies of its embedding ("frames"), and the model
// has to recover the token sequence. Test conditions add zero-mean Gaussian
// noise at an exact signal-to-noise ratio.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mgsc/asr_objective.hpp"
#include "mgsc/error.hpp"
#include "mgsc/tensor.hpp"

namespace mgsc {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(a) ^ (b + 0x632be59bd9b4e019ULL));
}

struct SyntheticSample {
  Mat features;                    // (t_in, feature_dim)
  LabelSequence targets;           // task tokens, no end symbol
  std::vector<int> true_alignment; // frame -> index into targets
};

struct TaskConfig {
  int vocab = 8;  // number of task tokens (the model adds one end symbol)
  int min_len = 4;
  int max_len = 8;
  int min_dur = 2;
  int max_dur = 4;
  int feature_dim = 8;
  double jitter = 0.01;  // per-frame jitter std, relative to unit embedding scale
  double successor_prob = 0.0;  // chance that a token is followed by its preferred successor
  std::uint64_t embedding_seed = 1234;

  void validate() const {
    if (vocab < 2) throw ValidationError("task: vocab must be >= 2");
    if (min_len < 1 || max_len < min_len) throw ValidationError("task: invalid length range");
    if (min_dur < 1 || max_dur < min_dur) throw ValidationError("task: invalid duration range");
    if (feature_dim < 1) throw ValidationError("task: feature_dim must be >= 1");
    if (!(jitter >= 0.0)) throw ValidationError("task: jitter must be non-negative");
    if (!(successor_prob >= 0.0 && successor_prob <= 1.0)) {
      throw ValidationError("task: successor_prob must lie in [0,1]");
    }
  }
};

/// Fixed token-embedding table (vocab x feature_dim) of a task.
inline Mat token_embeddings(const TaskConfig& task) {
  task.validate();
  std::mt19937_64 rng(mix_seed(task.embedding_seed, 0xe3b0c442ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat table(task.vocab, task.feature_dim);
  for (auto& v : table.flat()) v = normal(rng);
  return table;
}

/// Preferred successor of each token (never the token itself), fixed per task
/// like the embedding table.
inline std::vector<int> successor_table(const TaskConfig& task) {
  task.validate();
  std::mt19937_64 rng(mix_seed(task.embedding_seed, 0x5cc3ULL));
  std::uniform_int_distribution<int> other(0, task.vocab - 2);
  std::vector<int> succ(task.vocab);
  for (int t = 0; t < task.vocab; ++t) {
    succ[t] = other(rng);
    if (succ[t] >= t) ++succ[t];
  }
  return succ;
}

/// Draws `count` samples. Adjacent target tokens always differ, so token
/// boundaries are visible in the frames. With successor_prob > 0 each token
/// is followed by its preferred successor with that probability, giving the
/// decoder a learnable sequence prior.
inline std::vector<SyntheticSample> generate_dataset(const TaskConfig& task, std::size_t count,
                                                     std::uint64_t seed) {
  const Mat table = token_embeddings(task);
  std::mt19937_64 rng(mix_seed(seed, 0x5a3b1e11ULL));
  std::uniform_int_distribution<int> len_dist(task.min_len, task.max_len);
  std::uniform_int_distribution<int> dur_dist(task.min_dur, task.max_dur);
  std::uniform_int_distribution<int> tok_dist(0, task.vocab - 1);
  std::uniform_int_distribution<int> other_dist(0, task.vocab - 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto succ = successor_table(task);

  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    SyntheticSample s;
    const int len = len_dist(rng);
    std::vector<int> durations;
    for (int i = 0; i < len; ++i) {
      int tok = tok_dist(rng);
      if (i > 0) {
        const int prev = s.targets.back();
        if (task.successor_prob > 0.0 && unit(rng) < task.successor_prob) {
          tok = succ[prev];
        } else {
          tok = other_dist(rng);
          if (tok >= prev) ++tok;
        }
      }
      s.targets.push_back(tok);
      durations.push_back(dur_dist(rng));
    }
    const int t_in = std::accumulate(durations.begin(), durations.end(), 0);
    s.features = Mat(t_in, task.feature_dim);
    int frame = 0;
    for (int i = 0; i < len; ++i) {
      for (int k = 0; k < durations[i]; ++k, ++frame) {
        s.true_alignment.push_back(i);
        for (int f = 0; f < task.feature_dim; ++f) {
          s.features(frame, f) = table(s.targets[i], f) + task.jitter * normal(rng);
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// snr_db = +inf denotes the clean condition.
struct NoiseConfig {
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  bool clean() const noexcept { return std::isinf(snr_db) && snr_db > 0; }
};

inline double mean_power(const Mat& m) {
  double p = 0;
  for (double v : m.flat()) p += v * v;
  return m.empty() ? 0.0 : p / static_cast<double>(m.size());
}

inline double measured_snr_db(const Mat& clean, const Mat& noisy) {
  if (!clean.same_shape(noisy)) throw ShapeError("measured_snr_db: shape mismatch");
  double noise = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = noisy.flat()[i] - clean.flat()[i];
    noise += d * d;
  }
  noise /= static_cast<double>(clean.size());
  return 10.0 * std::log10(mean_power(clean) / noise);
}

/// Noise seed for one (sample, condition) pair under a base seed.
inline std::uint64_t noise_seed(std::uint64_t base, std::size_t sample_index, double snr_db) {
  return mix_seed(mix_seed(base, sample_index), std::bit_cast<std::uint64_t>(snr_db));
}

/// Adds zero-mean Gaussian noise rescaled so that the empirical power ratio
/// 10*log10(P_signal / P_noise) equals cfg.snr_db.
inline Mat inject_noise(const Mat& features, const NoiseConfig& cfg) {
  if (features.empty()) throw ValidationError("inject_noise: empty features");
  if (cfg.clean()) return features;
  if (!std::isfinite(cfg.snr_db)) throw ValidationError("inject_noise: snr must be finite or +inf");
  const double p_signal = mean_power(features);
  if (!(p_signal > 0.0)) throw ValidationError("inject_noise: signal has zero power");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat noise(features.rows(), features.cols());
  for (auto& v : noise.flat()) v = normal(rng);
  if (noise.size() > 1) {
    const double mu = std::accumulate(noise.flat().begin(), noise.flat().end(), 0.0) /
                      static_cast<double>(noise.size());
    for (auto& v : noise.flat()) v -= mu;
  }
  const double p_raw = mean_power(noise);
  const double p_target = p_signal / std::pow(10.0, cfg.snr_db / 10.0);
  const double gain = p_raw > 0.0 ? std::sqrt(p_target / p_raw) : 0.0;

  Mat out = features;
  for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] += gain * noise.flat()[i];
  return out;
}

/// Padded mini-batch. Padding frames are zero, padding tokens are -1, and the
/// masks mark real entries.
struct Batch {
  std::vector<std::size_t> sample_ids;
  std::vector<Mat> features;
  std::vector<LabelSequence> targets;
  std::vector<std::vector<std::uint8_t>> frame_mask;
  std::vector<std::vector<std::uint8_t>> token_mask;

  std::size_t size() const noexcept { return sample_ids.size(); }

  std::size_t frames(std::size_t k) const {
    return static_cast<std::size_t>(std::count(frame_mask[k].begin(), frame_mask[k].end(), 1));
  }
  std::size_t tokens(std::size_t k) const {
    return static_cast<std::size_t>(std::count(token_mask[k].begin(), token_mask[k].end(), 1));
  }

  /// Real (unpadded) features of element k.
  Mat frames_of(std::size_t k) const {
    const std::size_t n = frames(k);
    Mat m(n, features[k].cols());
    std::copy_n(features[k].flat().begin(), n * m.cols(), m.flat().begin());
    return m;
  }
  LabelSequence targets_of(std::size_t k) const {
    return LabelSequence(targets[k].begin(), targets[k].begin() + static_cast<long>(tokens(k)));
  }
};

inline Batch pad_batch(const std::vector<SyntheticSample>& samples, const std::vector<std::size_t>& ids) {
  Batch b;
  std::size_t max_t = 0, max_n = 0, dim = 0;
  for (auto id : ids) {
    max_t = std::max(max_t, samples[id].features.rows());
    max_n = std::max(max_n, samples[id].targets.size());
    dim = samples[id].features.cols();
  }
  for (auto id : ids) {
    const auto& s = samples[id];
    b.sample_ids.push_back(id);
    Mat f(max_t, dim, 0.0);
    std::copy(s.features.flat().begin(), s.features.flat().end(), f.flat().begin());
    b.features.push_back(std::move(f));
    LabelSequence t(max_n, -1);
    std::copy(s.targets.begin(), s.targets.end(), t.begin());
    b.targets.push_back(std::move(t));
    std::vector<std::uint8_t> fm(max_t, 0), tm(max_n, 0);
    std::fill_n(fm.begin(), s.features.rows(), 1);
    std::fill_n(tm.begin(), s.targets.size(), 1);
    b.frame_mask.push_back(std::move(fm));
    b.token_mask.push_back(std::move(tm));
  }
  return b;
}

/// Deterministic shuffle (per seed) into consecutive batches; the last batch
/// holds the remainder.
inline std::vector<Batch> make_batches(const std::vector<SyntheticSample>& samples, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (batch_size < 1) throw ValidationError("make_batches: batch size must be >= 1");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0xba7c4e5ULL));
  // Fisher-Yates by hand: std::shuffle's algorithm is implementation-defined.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(pad_batch(samples, std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                              order.begin() + static_cast<long>(end))));
  }
  return out;
}

// Dataset dump: "<prefix>.manifest" is line-oriented text,
// "<prefix>.bin" holds the feature blocks as raw native-endian doubles.
//
//   mgsc-dataset 1
//   count <N> feature_dim <F>
//   sample <i> frames <T> offset <doubles> targets <n> t1 .. tn align a1 .. aT
inline void write_dataset(const std::vector<SyntheticSample>& samples, const std::filesystem::path& prefix) {
  std::ofstream man(prefix.string() + ".manifest");
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!man || !bin) throw IoError("write_dataset: cannot open " + prefix.string());
  const std::size_t dim = samples.empty() ? 0 : samples.front().features.cols();
  man << "mgsc-dataset 1\ncount " << samples.size() << " feature_dim " << dim << "\n";
  std::size_t offset = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    man << "sample " << i << " frames " << s.features.rows() << " offset " << offset << " targets "
        << s.targets.size();
    for (int t : s.targets) man << ' ' << t;
    man << " align";
    for (int a : s.true_alignment) man << ' ' << a;
    man << '\n';
    bin.write(reinterpret_cast<const char*>(s.features.flat().data()),
              static_cast<std::streamsize>(s.features.size() * sizeof(double)));
    offset += s.features.size();
  }
  if (!man || !bin) throw IoError("write_dataset: write failed for " + prefix.string());
}

inline std::vector<SyntheticSample> read_dataset(const std::filesystem::path& prefix) {
  std::ifstream man(prefix.string() + ".manifest");
  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!man || !bin) throw IoError("read_dataset: cannot open " + prefix.string());
  std::string magic, key1, key2;
  int version = 0;
  std::size_t count = 0, dim = 0;
  if (!(man >> magic >> version) || magic != "mgsc-dataset" || version != 1) {
    throw IoError("read_dataset: bad header in " + prefix.string() + ".manifest");
  }
  if (!(man >> key1 >> count >> key2 >> dim) || key1 != "count" || key2 != "feature_dim") {
    throw IoError("read_dataset: bad count line");
  }
  std::vector<SyntheticSample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string tag, k_frames, k_offset, k_targets, k_align;
    std::size_t idx = 0, frames = 0, offset = 0, n = 0;
    if (!(man >> tag >> idx >> k_frames >> frames >> k_offset >> offset >> k_targets >> n) || tag != "sample" ||
        idx != i) {
      throw IoError("read_dataset: bad sample line " + std::to_string(i));
    }
    auto& s = out[i];
    s.targets.resize(n);
    for (auto& t : s.targets) man >> t;
    man >> k_align;
    s.true_alignment.resize(frames);
    for (auto& a : s.true_alignment) man >> a;
    if (!man || k_align != "align") throw IoError("read_dataset: truncated sample line " + std::to_string(i));
    s.features = Mat(frames, dim);
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    bin.read(reinterpret_cast<char*>(s.features.flat().data()),
             static_cast<std::streamsize>(s.features.size() * sizeof(double)));
    if (!bin) throw IoError("read_dataset: feature block " + std::to_string(i) + " truncated");
  }
  return out;
}

}  // namespace mgsc
