#pragma once

// Diagnostics: segment overlap by correctness category, Pearson correlation,
// incorrect/correct entropy ratio, and avg/worst/std@K sampling metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "less/registry.hpp"
#include "less/rollout.hpp"
#include "less/segmentation.hpp"

namespace less {

enum class OverlapCategory { CorrectOnly, Shared, IncorrectOnly, Singleton };

/// correct_only: n_r >= 2, n_w = 0; incorrect_only: n_w >= 2, n_r = 0;
/// shared: both positive; anything seen in a single response is a singleton.
inline OverlapCategory classify_entry(std::size_t n_r, std::size_t n_w) noexcept {
  if (n_r >= 1 && n_w >= 1) return OverlapCategory::Shared;
  if (n_r >= 2) return OverlapCategory::CorrectOnly;
  if (n_w >= 2) return OverlapCategory::IncorrectOnly;
  return OverlapCategory::Singleton;
}

/// Token masses of segment spans per category. Every S^seg span of the group
/// lands in exactly one bucket: the category of the registry entry equal to
/// it, or singleton when the span is only a piece of a longer entry.
struct OverlapMass {
  double correct_only = 0.0;
  double shared = 0.0;
  double incorrect_only = 0.0;
  double singleton = 0.0;
  double total = 0.0;
  // Raw registry entry counts per category, for count-weighted variants.
  std::size_t entries_correct_only = 0;
  std::size_t entries_shared = 0;
  std::size_t entries_incorrect_only = 0;
  std::size_t entries_singleton = 0;

  OverlapMass& operator+=(const OverlapMass& o) {
    correct_only += o.correct_only;
    shared += o.shared;
    incorrect_only += o.incorrect_only;
    singleton += o.singleton;
    total += o.total;
    entries_correct_only += o.entries_correct_only;
    entries_shared += o.entries_shared;
    entries_incorrect_only += o.entries_incorrect_only;
    entries_singleton += o.entries_singleton;
    return *this;
  }
};

struct OverlapRatios {
  double all = 0.0;
  double correct_only = 0.0;
  double shared = 0.0;
  double incorrect_only = 0.0;
  bool empty = true;  // no segment token mass at all

  static OverlapRatios from(const OverlapMass& m) {
    OverlapRatios r;
    if (m.total <= 0.0) return r;
    r.empty = false;
    r.correct_only = m.correct_only / m.total;
    r.shared = m.shared / m.total;
    r.incorrect_only = m.incorrect_only / m.total;
    r.all = 1.0 - m.singleton / m.total;
    return r;
  }
};

struct OverlapRow {
  OverlapMass mass;
  OverlapRatios ratios;
};

inline OverlapRow overlap_ratios(std::span<const EntropyStructures> structures,
                                 const SegmentRegistry& registry) {
  OverlapRow row;
  auto& m = row.mass;
  for (const auto& e : registry.entries()) {
    switch (classify_entry(e.n_r, e.n_w)) {
      case OverlapCategory::CorrectOnly: ++m.entries_correct_only; break;
      case OverlapCategory::Shared: ++m.entries_shared; break;
      case OverlapCategory::IncorrectOnly: ++m.entries_incorrect_only; break;
      case OverlapCategory::Singleton: ++m.entries_singleton; break;
    }
  }
  for (const auto& st : structures) {
    for (const auto& s : st.segs) {
      const double len = static_cast<double>(s.length());
      m.total += len;
      const auto k = registry.find(s.token_ids);
      const auto cat = k ? classify_entry(registry.entries()[*k].n_r, registry.entries()[*k].n_w)
                         : OverlapCategory::Singleton;
      switch (cat) {
        case OverlapCategory::CorrectOnly: m.correct_only += len; break;
        case OverlapCategory::Shared: m.shared += len; break;
        case OverlapCategory::IncorrectOnly: m.incorrect_only += len; break;
        case OverlapCategory::Singleton: m.singleton += len; break;
      }
    }
  }
  row.ratios = OverlapRatios::from(m);
  return row;
}

/// Convenience: segment and register the group, then measure overlap.
inline OverlapRow overlap_ratios(const RolloutGroup& group, double h, std::size_t min_len) {
  const auto st = extract_group_structures(group, h, min_len);
  const auto reg = build_registry(group, st);
  return overlap_ratios(st, reg);
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

struct Correlation {
  double r = 0.0;
  double p = 1.0;  // two-sided; 0 when |r| == 1
  std::size_t n = 0;
};

/// Product-moment r with a two-sided p-value from the t statistic
/// t = r * sqrt((n - 2) / (1 - r^2)) on n - 2 degrees of freedom.
inline Correlation pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 3) throw std::invalid_argument("pearson: need at least 3 pairs");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw std::domain_error("pearson: zero variance, correlation undefined");

  Correlation c;
  c.n = n;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double one_minus_r2 = 1.0 - c.r * c.r;
  if (one_minus_r2 <= 0.0) {
    c.p = 0.0;
    return c;
  }
  const double df = static_cast<double>(n - 2);
  const double t = c.r * std::sqrt(df / one_minus_r2);
  const boost::math::students_t dist(df);
  c.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  return c;
}

// ---------------------------------------------------------------------------
// Entropy ratio
// ---------------------------------------------------------------------------

/// Mean response entropy of incorrect responses over that of correct ones,
/// where a response's entropy is the mean over its tokens. Empty when the
/// group is one-sided or the correct side has zero mean entropy.
inline std::optional<double> entropy_ratio(const RolloutGroup& group) {
  double sum_r = 0.0, sum_w = 0.0;
  std::size_t n_r = 0, n_w = 0;
  for (const auto& resp : group.responses) {
    if (resp.tokens.empty()) continue;
    double e = 0.0;
    for (const auto& t : resp.tokens) e += t.entropy;
    e /= static_cast<double>(resp.tokens.size());
    if (resp.correct) {
      sum_r += e;
      ++n_r;
    } else {
      sum_w += e;
      ++n_w;
    }
  }
  if (n_r == 0 || n_w == 0) return std::nullopt;
  const double mean_r = sum_r / static_cast<double>(n_r);
  const double mean_w = sum_w / static_cast<double>(n_w);
  if (!(mean_r > 0.0)) return std::nullopt;
  return mean_w / mean_r;
}

// ---------------------------------------------------------------------------
// Sampling metrics
// ---------------------------------------------------------------------------

struct SampleMetrics {
  double avg = 0.0;    // mean score over prompts and samples
  double worst = 0.0;  // mean over prompts of the minimum sample score
  double stddev = 0.0; // mean over prompts of the population std of scores
  std::size_t k = 0;
};

/// avg/worst/std@K from a prompts x samples score matrix, using the first K
/// samples of each row so that smaller K is a nested prefix of larger K.
inline SampleMetrics sample_metrics(const std::vector<std::vector<double>>& scores, std::size_t k) {
  if (k < 1) throw std::invalid_argument("sample_metrics: K must be >= 1");
  if (scores.empty()) throw std::invalid_argument("sample_metrics: no prompts");
  SampleMetrics m;
  m.k = k;
  for (const auto& row : scores) {
    if (row.size() < k) throw std::invalid_argument("sample_metrics: row shorter than K");
    double mean = 0.0;
    double lo = row[0];
    for (std::size_t j = 0; j < k; ++j) {
      mean += row[j];
      lo = std::min(lo, row[j]);
    }
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (std::size_t j = 0; j < k; ++j) ss += (row[j] - mean) * (row[j] - mean);
    m.avg += mean;
    m.worst += lo;
    m.stddev += std::sqrt(ss / static_cast<double>(k));
  }
  const double p = static_cast<double>(scores.size());
  m.avg /= p;
  m.worst /= p;
  m.stddev /= p;
  return m;
}

}  // namespace less
