#pragma once

// Entropy thresholding and extraction of high-entropy tokens, short
// low-entropy fragments, and long low-entropy segments for one response.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "less/rollout.hpp"

namespace less {

inline constexpr double kDefaultQuantile = 0.8;
inline constexpr std::size_t kDefaultMinSegmentLength = 5;

enum class TokenClass { High, Low };

/// A maximal run of low-entropy tokens: offsets [start, end], both inclusive.
struct Segment {
  std::vector<TokenId> token_ids;
  std::size_t response_index = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start + 1; }
};

struct EntropyStructures {
  std::vector<std::size_t> high;  // offsets, ascending
  std::vector<Segment> frags;     // low runs shorter than min length
  std::vector<Segment> segs;      // low runs at least min length
  double threshold = 0.0;
};

/// Nearest-rank rank (1-based) of the h-quantile among n values.
///
/// h * n is nudged down by a relative 1e-12 before the ceiling so that
/// products like 0.7 * 10 = 7.000000000000001 land on the intended rank.
inline std::size_t nearest_rank(double h, std::size_t n) {
  const double scaled = h * static_cast<double>(n) * (1.0 - 1e-12);
  const double r = std::ceil(scaled);
  if (r < 1.0) return 1;
  if (r > static_cast<double>(n)) return n;
  return static_cast<std::size_t>(r);
}

/// Per-response threshold tau: the nearest-rank h-quantile of the entropies.
/// A token is high-entropy iff its entropy >= tau.
inline double entropy_threshold(std::span<const double> entropies, double h) {
  if (entropies.empty()) throw std::domain_error("entropy_threshold: empty entropy list");
  if (!(h >= 0.0 && h <= 1.0)) throw std::domain_error("entropy_threshold: h outside [0, 1]");
  std::vector<double> sorted(entropies.begin(), entropies.end());
  const std::size_t k = nearest_rank(h, sorted.size()) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  return sorted[k];
}

inline std::vector<TokenClass> classify_tokens(std::span<const double> entropies, double tau) {
  std::vector<TokenClass> labels(entropies.size());
  for (std::size_t j = 0; j < entropies.size(); ++j)
    labels[j] = entropies[j] >= tau ? TokenClass::High : TokenClass::Low;
  return labels;
}

inline std::vector<TokenClass> classify_tokens(const Response& response, double tau) {
  const auto e = response.entropies();
  return classify_tokens(std::span<const double>(e), tau);
}

/// Splits labelled tokens into high offsets and maximal low runs.
inline EntropyStructures split_runs(std::span<const TokenId> ids,
                                    std::span<const TokenClass> labels,
                                    std::size_t min_len, std::size_t response_index = 0) {
  if (min_len < 1) throw std::invalid_argument("minimum segment length must be >= 1");
  EntropyStructures out;
  const std::size_t n = labels.size();
  std::size_t j = 0;
  while (j < n) {
    if (labels[j] == TokenClass::High) {
      out.high.push_back(j++);
      continue;
    }
    const std::size_t start = j;
    while (j < n && labels[j] == TokenClass::Low) ++j;
    Segment s;
    s.response_index = response_index;
    s.start = start;
    s.end = j - 1;
    s.token_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                       ids.begin() + static_cast<std::ptrdiff_t>(j));
    (s.length() >= min_len ? out.segs : out.frags).push_back(std::move(s));
  }
  return out;
}

inline EntropyStructures extract_structures(const Response& response, double h,
                                            std::size_t min_len,
                                            std::size_t response_index = 0) {
  const auto entropies = response.entropies();
  const auto ids = response.token_ids();
  const double tau = entropy_threshold(entropies, h);
  const auto labels = classify_tokens(std::span<const double>(entropies), tau);
  auto out = split_runs(ids, labels, min_len, response_index);
  out.threshold = tau;
  return out;
}

/// Structures for every response of a group, in response order.
inline std::vector<EntropyStructures> extract_group_structures(const RolloutGroup& group,
                                                               double h, std::size_t min_len) {
  std::vector<EntropyStructures> out;
  out.reserve(group.responses.size());
  for (std::size_t i = 0; i < group.responses.size(); ++i)
    out.push_back(extract_structures(group.responses[i], h, min_len, i));
  return out;
}

}  // namespace less
