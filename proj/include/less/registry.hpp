#pragma once

// Group-level registry of maximal low-entropy segments and their
// correct/incorrect occurrence counts.

#include <algorithm>
#include <bit>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "less/rollout.hpp"
#include "less/segmentation.hpp"

namespace less {

/// True iff `inner` occurs as a contiguous run inside `outer`.
inline bool is_contained(std::span<const TokenId> inner, std::span<const TokenId> outer) {
  if (inner.empty() || inner.size() > outer.size()) return false;
  return std::search(outer.begin(), outer.end(), inner.begin(), inner.end()) != outer.end();
}

/// Containment with |inner| < |outer|; equal sequences are not strictly contained.
inline bool is_strictly_contained(std::span<const TokenId> inner,
                                  std::span<const TokenId> outer) {
  return inner.size() < outer.size() && is_contained(inner, outer);
}

struct Witness {
  std::size_t response_index = 0;
  std::size_t start = 0;

  friend bool operator==(const Witness&, const Witness&) = default;
};

struct SegmentStats {
  std::vector<TokenId> key;
  std::size_t n_r = 0;
  std::size_t n_w = 0;
  std::vector<Witness> occurrences;
};

namespace detail {

struct TokenSeqHash {
  std::size_t operator()(const std::vector<TokenId>& v) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (TokenId t : v) {
      h ^= t;
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

}  // namespace detail

/// The set of maximal segments of one group, in first-insertion order
/// (response order, then span order), plus a key index.
class SegmentRegistry {
 public:
  const std::vector<SegmentStats>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::optional<std::size_t> find(const std::vector<TokenId>& key) const {
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// The registry entry a segment's tokens are attributed to: the entry equal
  /// to the span if there is one, otherwise the longest entry containing it
  /// (earliest on ties). Empty only if no entry contains the span.
  std::optional<std::size_t> covering_entry(const std::vector<TokenId>& span) const {
    if (auto exact = find(span)) return exact;
    if (const auto it = cover_.find(span); it != cover_.end()) return it->second;
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const auto& key = entries_[k].key;
      if (best && key.size() <= entries_[*best].key.size()) continue;
      if (is_strictly_contained(span, key)) best = k;
    }
    return best;
  }

 private:
  friend SegmentRegistry build_registry(const RolloutGroup&,
                                        std::span<const EntropyStructures>);

  std::vector<SegmentStats> entries_;
  std::unordered_map<std::vector<TokenId>, std::size_t, detail::TokenSeqHash> index_;
  // Swept segments and the entry they are attributed to.
  std::unordered_map<std::vector<TokenId>, std::size_t, detail::TokenSeqHash> cover_;
};

/// (n_r, n_w) for one key: a response counts once if the key lies inside any
/// of its segments. Witnesses receive every matching (response, offset).
inline std::pair<std::size_t, std::size_t> count_occurrences(
    std::span<const TokenId> key, const RolloutGroup& group,
    std::span<const EntropyStructures> structures, std::vector<Witness>* witnesses = nullptr) {
  std::size_t n_r = 0;
  std::size_t n_w = 0;
  for (std::size_t i = 0; i < structures.size(); ++i) {
    bool hit = false;
    for (const auto& seg : structures[i].segs) {
      if (seg.token_ids.size() < key.size()) continue;
      auto it = seg.token_ids.begin();
      while (true) {
        it = std::search(it, seg.token_ids.end(), key.begin(), key.end());
        if (it == seg.token_ids.end()) break;
        hit = true;
        if (!witnesses) break;
        witnesses->push_back(
            {i, seg.start + static_cast<std::size_t>(it - seg.token_ids.begin())});
        ++it;
      }
      if (hit && !witnesses) break;
    }
    if (hit) (group.responses[i].correct ? n_r : n_w) += 1;
  }
  return {n_r, n_w};
}

namespace detail {

/// Polynomial prefix hashes (mod 2^64) of one token sequence.
class PrefixHash {
 public:
  static constexpr std::uint64_t kBase = 0x100000001b3ull;

  explicit PrefixHash(std::span<const TokenId> seq) : prefix_(seq.size() + 1, 0) {
    for (std::size_t i = 0; i < seq.size(); ++i) prefix_[i + 1] = prefix_[i] * kBase + seq[i] + 1;
  }

  std::uint64_t of(std::size_t pos, std::size_t len, std::span<const std::uint64_t> powers) const {
    return prefix_[pos + len] - prefix_[pos] * powers[len];
  }

  std::uint64_t whole(std::span<const std::uint64_t> powers) const {
    return of(0, prefix_.size() - 1, powers);
  }

 private:
  std::vector<std::uint64_t> prefix_;
};

}  // namespace detail

/// Builds the maximal-segment registry for a group and counts every entry.
///
/// Every segment is inserted (duplicates collapse), then any entry strictly
/// contained in another entry is swept out. The result is containment-free
/// regardless of the order segments were seen in.
///
/// Containment is found by hashing, for every candidate, each of its
/// substrings whose length matches some shorter candidate, and confirming
/// hash hits exactly. Work is bounded by the sum of squared segment lengths
/// rather than the square of the segment count.
inline SegmentRegistry build_registry(const RolloutGroup& group,
                                      std::span<const EntropyStructures> structures) {
  if (structures.size() != group.responses.size())
    throw std::invalid_argument("build_registry: one EntropyStructures per response required");

  std::vector<std::vector<TokenId>> candidates;
  std::unordered_map<std::vector<TokenId>, std::size_t, detail::TokenSeqHash> seen;
  std::size_t max_len = 0;
  {
    std::size_t total = 0;
    for (const auto& st : structures) total += st.segs.size();
    seen.reserve(total);
    candidates.reserve(total);
  }
  for (const auto& st : structures) {
    for (const auto& seg : st.segs) {
      if (seen.emplace(seg.token_ids, candidates.size()).second) {
        candidates.push_back(seg.token_ids);
        max_len = std::max(max_len, seg.token_ids.size());
      }
    }
  }

  std::vector<std::uint64_t> powers(max_len + 1, 1);
  for (std::size_t k = 1; k < powers.size(); ++k) powers[k] = powers[k - 1] * detail::PrefixHash::kBase;

  // Candidates chained by whole-sequence hash, plus a bit filter that
  // rejects most substring hashes without touching the table.
  std::vector<std::size_t> lengths;
  std::unordered_map<std::uint64_t, std::size_t> first_with_hash;
  first_with_hash.reserve(candidates.size());
  std::vector<std::size_t> next_with_hash(candidates.size(), SIZE_MAX);
  const std::size_t filter_bits = std::bit_ceil(std::max<std::size_t>(64, 16 * candidates.size()));
  std::vector<std::uint64_t> filter(filter_bits / 64, 0);
  const auto filter_slot = [&](std::uint64_t h) { return (h >> 17) & (filter_bits - 1); };
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    lengths.push_back(candidates[k].size());
    const std::uint64_t h = detail::PrefixHash(candidates[k]).whole(powers);
    const auto [it, fresh] = first_with_hash.emplace(h, k);
    if (!fresh) {
      next_with_hash[k] = it->second;
      it->second = k;
    }
    filter[filter_slot(h) / 64] |= std::uint64_t{1} << (filter_slot(h) % 64);
  }
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  // Calls visit(inner) for every candidate strictly inside candidates[outer].
  const auto for_each_inner = [&](std::size_t outer, auto&& visit) {
    const auto& seq = candidates[outer];
    const detail::PrefixHash ph(seq);
    for (std::size_t len : lengths) {
      if (len >= seq.size()) break;
      for (std::size_t pos = 0; pos + len <= seq.size(); ++pos) {
        const std::uint64_t h = ph.of(pos, len, powers);
        if (!(filter[filter_slot(h) / 64] >> (filter_slot(h) % 64) & 1)) continue;
        const auto it = first_with_hash.find(h);
        if (it == first_with_hash.end()) continue;
        for (std::size_t inner = it->second; inner != SIZE_MAX; inner = next_with_hash[inner]) {
          const auto& c = candidates[inner];
          if (c.size() == len && std::equal(c.begin(), c.end(), seq.begin() + static_cast<std::ptrdiff_t>(pos)))
            visit(inner);
        }
      }
    }
  };

  std::vector<bool> keep(candidates.size(), true);
  for (std::size_t k = 0; k < candidates.size(); ++k)
    for_each_inner(k, [&](std::size_t inner) { keep[inner] = false; });

  SegmentRegistry reg;
  std::vector<std::size_t> entry_of(candidates.size(), SIZE_MAX);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!keep[k]) continue;
    entry_of[k] = reg.entries_.size();
    SegmentStats s;
    s.key = candidates[k];
    reg.index_.emplace(s.key, reg.entries_.size());
    reg.entries_.push_back(std::move(s));
  }

  // Attribute each swept candidate to the longest kept entry holding it,
  // earliest entry on ties.
  std::vector<std::size_t> cover(candidates.size(), SIZE_MAX);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!keep[k]) continue;
    const std::size_t e = entry_of[k];
    for_each_inner(k, [&](std::size_t inner) {
      std::size_t& best = cover[inner];
      if (best == SIZE_MAX) {
        best = e;
        return;
      }
      const std::size_t best_len = reg.entries_[best].key.size();
      if (candidates[k].size() > best_len || (candidates[k].size() == best_len && e < best)) best = e;
    });
  }
  for (std::size_t k = 0; k < candidates.size(); ++k)
    if (!keep[k]) reg.cover_.emplace(std::move(candidates[k]), cover[k]);

  // With the registry containment-free, a key lies inside a segment only
  // when it equals that segment (a longer segment containing it would be an
  // entry or inside one), so counting is exact lookup.
  for (std::size_t i = 0; i < structures.size(); ++i) {
    const bool correct = group.responses[i].correct;
    for (const auto& seg : structures[i].segs) {
      const auto it = reg.index_.find(seg.token_ids);
      if (it == reg.index_.end()) continue;
      auto& e = reg.entries_[it->second];
      const bool first_in_response = e.occurrences.empty() || e.occurrences.back().response_index != i;
      if (first_in_response) (correct ? e.n_r : e.n_w) += 1;
      e.occurrences.push_back({i, seg.start});
    }
  }
  for ([[maybe_unused]] const auto& e : reg.entries_) assert(e.n_r + e.n_w >= 1);
  return reg;
}

}  // namespace less
