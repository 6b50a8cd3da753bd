#pragma once

// Correctness-aware advantage shaping over low-entropy structures.
//
// Per token of response i with base advantage A:
//   high-entropy token                      -> A
//   fragment token, correct / incorrect     -> A / N_r  or  A / N_w
//   segment token, entry seen on both sides -> 0
//   segment token, correct-only entry       -> (n_r / N_r) * A
//   segment token, incorrect-only entry     -> (n_w / N_w) * A

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "less/registry.hpp"
#include "less/rollout.hpp"
#include "less/segmentation.hpp"

namespace less {

struct ShapingConfig {
  double h = kDefaultQuantile;
  std::size_t min_seg_len = kDefaultMinSegmentLength;
  bool neutralize_shared = true;

  void validate() const {
    if (!(h >= 0.0 && h <= 1.0)) throw std::invalid_argument("ShapingConfig: h outside [0, 1]");
    if (min_seg_len < 1) throw std::invalid_argument("ShapingConfig: min_seg_len must be >= 1");
  }
};

/// Which branch of the shaping rule a token took.
enum class ShapeBranch : unsigned char {
  High,
  FragCorrect,
  FragIncorrect,
  SegShared,
  SegCorrectOnly,
  SegIncorrectOnly,
};

/// Everything shape_group derives for one group; kept for analysis.
struct GroupShapingTrace {
  std::vector<EntropyStructures> structures;
  SegmentRegistry registry;
  std::vector<std::vector<ShapeBranch>> branches;  // per response, per token
};

namespace detail {

inline double segment_scale(const SegmentStats& e, bool neutralize_shared, std::size_t n_r_total,
                            std::size_t n_w_total, bool response_correct, ShapeBranch& branch) {
  if (e.n_r > 0 && e.n_w > 0) {
    branch = ShapeBranch::SegShared;
    if (neutralize_shared) return 0.0;
    // Shared entry with neutralization off: keep the response's own side.
    return response_correct ? static_cast<double>(e.n_r) / static_cast<double>(n_r_total)
                            : static_cast<double>(e.n_w) / static_cast<double>(n_w_total);
  }
  if (e.n_r > 0) {
    branch = ShapeBranch::SegCorrectOnly;
    return static_cast<double>(e.n_r) / static_cast<double>(n_r_total);
  }
  branch = ShapeBranch::SegIncorrectOnly;
  return static_cast<double>(e.n_w) / static_cast<double>(n_w_total);
}

}  // namespace detail

/// Shapes one group in place and returns the intermediate structures.
/// Every response must already carry base_advantage.
inline GroupShapingTrace shape_group_in_place(RolloutGroup& group, const ShapingConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    if (!group.responses[i].base_advantage)
      throw ContractError("query '" + group.query_id + "' response " + std::to_string(i) +
                          " has no base advantage");
  }

  GroupShapingTrace trace;
  if (group.responses.size() < 2) {
    // Undersized groups are skipped: advantage is undefined, emit zeros.
    for (auto& r : group.responses) r.shaped = std::vector<double>(r.tokens.size(), 0.0);
    return trace;
  }

  trace.structures = extract_group_structures(group, cfg.h, cfg.min_seg_len);
  trace.registry = build_registry(group, trace.structures);
  const std::size_t n_r_total = group.num_correct();
  const std::size_t n_w_total = group.num_incorrect();
  trace.branches.resize(group.responses.size());

  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    auto& resp = group.responses[i];
    const auto& st = trace.structures[i];
    const double adv = *resp.base_advantage;
    std::vector<double> shaped(resp.tokens.size(), 0.0);
    auto& branch = trace.branches[i];
    branch.assign(resp.tokens.size(), ShapeBranch::High);

    for (std::size_t j : st.high) shaped[j] = adv;

    const auto frag_fill = [&](const Segment& s) {
      double v = 0.0;
      ShapeBranch b;
      if (resp.correct) {
        assert(n_r_total >= 1);
        v = adv / static_cast<double>(n_r_total);
        b = ShapeBranch::FragCorrect;
      } else {
        assert(n_w_total >= 1);
        v = adv / static_cast<double>(n_w_total);
        b = ShapeBranch::FragIncorrect;
      }
      for (std::size_t j = s.start; j <= s.end; ++j) {
        shaped[j] = v;
        branch[j] = b;
      }
    };

    for (const auto& s : st.frags) frag_fill(s);
    for (const auto& s : st.segs) {
      const auto k = trace.registry.covering_entry(s.token_ids);
      assert(k.has_value());
      if (!k) {
        frag_fill(s);
        continue;
      }
      ShapeBranch b;
      const double scale = detail::segment_scale(trace.registry.entries()[*k],
                                                 cfg.neutralize_shared, n_r_total, n_w_total,
                                                 resp.correct, b);
      for (std::size_t j = s.start; j <= s.end; ++j) {
        shaped[j] = scale * adv;
        branch[j] = b;
      }
    }
    resp.shaped = std::move(shaped);
  }
  return trace;
}

inline RolloutGroup shape_group(RolloutGroup group, const ShapingConfig& cfg) {
  shape_group_in_place(group, cfg);
  return group;
}

/// Worker count: LESS_SHAPER_THREADS if set to a positive integer, else the
/// hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("LESS_SHAPER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, n) across up to `workers` threads. Indices are
/// dealt in contiguous blocks. The first exception (lowest index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * block;
    const std::size_t hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Error from one group of a batch, tagged with its position and query id.
class GroupError : public std::runtime_error {
 public:
  GroupError(std::size_t index, const std::string& query_id, const std::string& what)
      : std::runtime_error("group " + std::to_string(index) + " ('" + query_id + "'): " + what),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

inline void shape_batch_in_place(std::vector<RolloutGroup>& groups, const ShapingConfig& cfg,
                                 std::size_t workers = worker_count()) {
  cfg.validate();
  parallel_for(groups.size(), workers, [&](std::size_t i) {
    try {
      shape_group_in_place(groups[i], cfg);
    } catch (const std::exception& e) {
      throw GroupError(i, groups[i].query_id, e.what());
    }
  });
}

inline std::vector<RolloutGroup> shape_batch(std::vector<RolloutGroup> groups,
                                             const ShapingConfig& cfg,
                                             std::size_t workers = worker_count()) {
  shape_batch_in_place(groups, cfg, workers);
  return groups;
}

}  // namespace less
