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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgsc/asr_objective.hpp"
#include "mgsc/consistency_losses.hpp"
#include "mgsc/error.hpp"

namespace mgsc {

/// Unit-cost Levenshtein distance (substitutions, insertions, deletions).
template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Edit distance normalized by the reference length; can exceed 1.
inline double cer(std::span<const int> hypothesis, std::span<const int> reference) {
  if (reference.empty()) throw ValidationError("cer: empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

/// Removes every occurrence of the end symbol.
inline LabelSequence strip_symbol(std::span<const int> seq, int symbol) {
  LabelSequence out;
  for (int s : seq) {
    if (s != symbol) out.push_back(s);
  }
  return out;
}

/// Fraction of steps i >= 1 with pi_i < pi_{i-1}. Zero for paths shorter than 2.
template <std::floating_point T>
double monotonicity_violation_rate(const AlignmentPath<T>& path) {
  const auto& p = path.positions;
  if (p.size() < 2) return 0.0;
  std::size_t regress = 0;
  for (std::size_t i = 1; i < p.size(); ++i) regress += p[i] < p[i - 1];
  return static_cast<double>(regress) / static_cast<double>(p.size() - 1);
}

/// Mean over pairs of 1 - cos(M_enc, M_dec).
inline double representation_gap(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs) {
  if (pairs.empty()) throw ValidationError("representation_gap: no pairs");
  double sum = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      sum += 1.0 - cosine_similarity<double>(pairs[i].first, pairs[i].second);
    } catch (const DegenerateRepresentationError&) {
      throw DegenerateRepresentationError("representation_gap: sample " + std::to_string(i) +
                                          " has a near-zero representation");
    }
  }
  return sum / static_cast<double>(pairs.size());
}

/// (baseline - variant) / baseline; negative when the variant is worse.
inline double relative_cer_reduction(double variant_cer, double baseline_cer) {
  if (!(baseline_cer > 0.0)) throw ValidationError("relative_cer_reduction: baseline CER must be positive");
  return (baseline_cer - variant_cer) / baseline_cer;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Evaluation condition: a name plus its SNR (+inf for clean).
struct Condition {
  std::string name;
  double snr_db;

  bool clean() const noexcept { return std::isinf(snr_db); }
};

inline std::string condition_name(double snr_db) {
  if (std::isinf(snr_db)) return "clean";
  std::ostringstream os;
  os << snr_db << "dB";
  return os.str();
}

inline std::vector<Condition> default_conditions() {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Condition> c;
  for (double s : {inf, 0.0, 2.5, 5.0, 7.5, 10.0}) c.push_back({condition_name(s), s});
  return c;
}

/// Variant x condition CER table (fractions, rendered as percentages).
struct AblationReport {
  std::vector<std::string> variants;
  std::vector<Condition> conditions;
  std::map<std::string, std::vector<double>> cer;  // variant -> per condition

  /// Mean over the noisy conditions of one variant's row.
  double noisy_average(const std::string& variant) const {
    const auto& row = cer.at(variant);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
      if (conditions[c].clean()) continue;
      sum += row[c];
      ++n;
    }
    if (n == 0) throw ValidationError("noisy_average: no noisy conditions");
    return sum / static_cast<double>(n);
  }

  bool has_noisy() const {
    return std::any_of(conditions.begin(), conditions.end(), [](const Condition& c) { return !c.clean(); });
  }

  /// `variant,condition,cer` with CER in percent; the noisy average is the
  /// last condition of each variant.
  std::string to_csv() const {
    std::ostringstream os;
    os << "variant,condition,cer\n";
    char buf[64];
    for (const auto& v : variants) {
      const auto& row = cer.at(v);
      for (std::size_t c = 0; c < conditions.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%.6f", 100.0 * row[c]);
        os << v << ',' << conditions[c].name << ',' << buf << '\n';
      }
      if (has_noisy()) {
        std::snprintf(buf, sizeof buf, "%.6f", 100.0 * noisy_average(v));
        os << v << ",noisy_avg," << buf << '\n';
      }
    }
    return os.str();
  }

  /// Fixed-width text table, one row per variant, CER in percent.
  std::string to_table() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "System");
    os << buf;
    for (const auto& c : conditions) {
      std::snprintf(buf, sizeof buf, "%10s", c.name.c_str());
      os << buf;
    }
    if (has_noisy()) {
      std::snprintf(buf, sizeof buf, "%11s", "Noisy avg");
      os << buf;
    }
    os << '\n';
    for (const auto& v : variants) {
      std::snprintf(buf, sizeof buf, "%-10s", v.c_str());
      os << buf;
      for (double x : cer.at(v)) {
        std::snprintf(buf, sizeof buf, "%10.2f", 100.0 * x);
        os << buf;
      }
      if (has_noisy()) {
        std::snprintf(buf, sizeof buf, "%11.2f", 100.0 * noisy_average(v));
        os << buf;
      }
      os << '\n';
    }
    return os.str();
  }

  /// Relative CER reduction of each non-baseline variant against `baseline`,
  /// per condition: `variant,condition,relative_reduction`.
  std::string reduction_csv(const std::string& baseline = "baseline") const {
    std::ostringstream os;
    os << "variant,condition,relative_reduction\n";
    if (!cer.count(baseline)) return os.str();
    const auto& base = cer.at(baseline);
    char buf[64];
    auto emit = [&](const std::string& v, const std::string& cond, double var, double ref) {
      if (ref > 0.0) {
        std::snprintf(buf, sizeof buf, "%.6f", relative_cer_reduction(var, ref));
      } else {
        std::snprintf(buf, sizeof buf, "nan");
      }
      os << v << ',' << cond << ',' << buf << '\n';
    };
    for (const auto& v : variants) {
      if (v == baseline) continue;
      for (std::size_t c = 0; c < conditions.size(); ++c) emit(v, conditions[c].name, cer.at(v)[c], base[c]);
      if (has_noisy()) emit(v, "noisy_avg", noisy_average(v), noisy_average(baseline));
    }
    return os.str();
  }
};

}  // namespace mgsc
