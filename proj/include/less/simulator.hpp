#pragma once

// Desk-scale RLVR testbed: a tabular softmax policy over hashed contexts,
// trained with GRPO or LESS-shaped GRPO on a chain-arithmetic task whose
// final answer is checked by a deterministic verifier.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "less/analysis.hpp"
#include "less/grpo.hpp"
#include "less/rollout.hpp"
#include "less/shaping.hpp"

namespace less::sim {

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Stream seed derived from a base seed and a tuple of indices.
template <typename... Ts>
std::uint64_t derive_seed(std::uint64_t base, Ts... parts) noexcept {
  std::uint64_t h = splitmix64(base);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

/// Chain arithmetic: the prompt is `num_terms` digits in [0, modulus). A
/// well-formed response is
///
///     d1 s1 , d2 s2 , ... dk sk = sk <eos>
///
/// where d_j copies the j-th prompt digit and s_j is the running sum mod
/// `modulus`. Only the outcome is verified: the response must end in
/// `= answer <eos>` with the correct final sum.
struct ToyTask {
  std::size_t modulus = 5;
  std::size_t num_terms = 4;
  std::size_t max_length = 16;
  std::uint64_t seed = 0;

  TokenId sep() const noexcept { return static_cast<TokenId>(modulus); }
  TokenId eq() const noexcept { return static_cast<TokenId>(modulus + 1); }
  TokenId eos() const noexcept { return static_cast<TokenId>(modulus + 2); }
  std::size_t vocab_size() const noexcept { return modulus + 3; }
  std::size_t canonical_length() const noexcept { return 3 * num_terms + 2; }

  void validate() const {
    if (modulus < 2 || vocab_size() > 32) throw std::invalid_argument("ToyTask: modulus in [2, 29]");
    if (num_terms < 1) throw std::invalid_argument("ToyTask: num_terms >= 1");
    if (max_length < canonical_length() || max_length > 64)
      throw std::invalid_argument("ToyTask: max_length must cover a full answer and be <= 64");
  }

  std::vector<TokenId> instance(std::uint64_t index) const {
    std::mt19937_64 rng(derive_seed(seed, 0x7a5cull, index));
    std::vector<TokenId> digits(num_terms);
    for (auto& d : digits) d = static_cast<TokenId>(rng() % modulus);
    return digits;
  }

  TokenId answer(std::span<const TokenId> prompt) const {
    std::size_t s = 0;
    for (TokenId d : prompt) s = (s + d) % modulus;
    return static_cast<TokenId>(s);
  }

  bool verify(std::span<const TokenId> prompt, std::span<const TokenId> response) const {
    const std::size_t n = response.size();
    if (n < 3) return false;
    return response[n - 1] == eos() && response[n - 3] == eq() &&
           response[n - 2] == answer(prompt);
  }

  bool is_arithmetic_slot(std::size_t position) const noexcept {
    return position % 3 == 1 && position / 3 < num_terms;
  }

  /// The correct continuation after `prefix`, following the canonical layout.
  TokenId reference_next(std::span<const TokenId> prompt, std::span<const TokenId> prefix) const {
    const std::size_t p = prefix.size();
    const std::size_t step = p / 3;
    if (step < num_terms) {
      switch (p % 3) {
        case 0: return prompt[step];
        case 1: {
          std::size_t s = 0;
          for (std::size_t j = 0; j <= step; ++j) s = (s + prompt[j]) % modulus;
          return static_cast<TokenId>(s);
        }
        default: return step + 1 == num_terms ? eq() : sep();
      }
    }
    return p == 3 * num_terms ? answer(prompt) : eos();
  }

  /// Context key the policy conditions on: position, previous token, the most
  /// recent sum-slot token, and the prompt digit of the current step.
  std::uint64_t context_key(std::span<const TokenId> prompt, std::span<const TokenId> prefix) const {
    const std::size_t p = prefix.size();
    const std::uint64_t none = 0xffu;
    const std::uint64_t prev = p ? prefix[p - 1] : none;
    std::uint64_t last_sum = none;
    for (std::size_t q = p; q-- > 0;) {
      if (q % 3 == 1 && q / 3 < num_terms) {
        last_sum = prefix[q];
        break;
      }
    }
    const std::size_t step = p / 3;
    const std::uint64_t digit = step < num_terms ? prompt[step] : none;
    return (static_cast<std::uint64_t>(p) << 24) | (prev << 16) | (last_sum << 8) | digit;
  }
};

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Tabular softmax policy: one logit row per hashed context bucket.
class ToyPolicy {
 public:
  ToyPolicy() = default;
  ToyPolicy(std::size_t buckets, std::size_t vocab, double temperature = 1.0)
      : buckets_(buckets), vocab_(vocab), temperature_(temperature), logits_(buckets * vocab, 0.0) {
    if (buckets == 0 || vocab == 0) throw std::invalid_argument("ToyPolicy: empty shape");
    if (!(temperature > 0.0)) throw std::invalid_argument("ToyPolicy: temperature must be > 0");
  }

  std::size_t buckets() const noexcept { return buckets_; }
  std::size_t vocab() const noexcept { return vocab_; }
  double temperature() const noexcept { return temperature_; }
  std::size_t num_params() const noexcept { return logits_.size(); }
  std::span<double> params() noexcept { return logits_; }
  std::span<const double> params() const noexcept { return logits_; }

  std::size_t bucket(std::uint64_t context_key) const noexcept {
    return static_cast<std::size_t>(splitmix64(context_key) % buckets_);
  }

  std::span<double> row(std::size_t b) noexcept {
    return std::span<double>(logits_).subspan(b * vocab_, vocab_);
  }
  std::span<const double> row(std::size_t b) const noexcept {
    return std::span<const double>(logits_).subspan(b * vocab_, vocab_);
  }

  std::vector<double> probs(std::size_t b) const {
    const auto r = row(b);
    std::vector<double> p(vocab_);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v / temperature_);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab_; ++v) z += (p[v] = std::exp(r[v] / temperature_ - mx));
    for (double& x : p) x /= z;
    return p;
  }

  double log_prob(std::size_t b, TokenId tok) const {
    const auto r = row(b);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v / temperature_);
    double z = 0.0;
    for (double v : r) z += std::exp(v / temperature_ - mx);
    return r[tok] / temperature_ - mx - std::log(z);
  }

  /// Shannon entropy (nats) of the bucket's next-token distribution.
  double entropy(std::size_t b) const {
    double h = 0.0;
    for (double q : probs(b))
      if (q > 0.0) h -= q * std::log(q);
    return h;
  }

  bool finite() const noexcept {
    return std::all_of(logits_.begin(), logits_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t buckets_ = 0;
  std::size_t vocab_ = 0;
  double temperature_ = 1.0;
  std::vector<double> logits_;
};

/// Synthetic pretraining. Routine slots (copies, separators, the answer copy,
/// end of sequence) get a strong bias toward the reference token, which makes
/// them near-deterministic. Arithmetic slots get a weaker bias, and a seeded
/// fraction of them are "misconceptions" biased toward a fixed wrong sum.
/// Gaussian noise goes on every logit.
struct PriorConfig {
  double routine_strength = 6.0;
  double arithmetic_strength = 3.0;
  double misconception_rate = 0.1;
  double misconception_strength = 3.0;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

inline ToyPolicy pretrained_policy(const ToyTask& task, std::size_t buckets, const PriorConfig& prior,
                                   double temperature = 1.0) {
  task.validate();
  ToyPolicy pol(buckets, task.vocab_size(), temperature);
  std::mt19937_64 noise_rng(derive_seed(prior.seed, 0x9015eull));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : pol.params()) v = prior.noise * gauss(noise_rng);

  // Walk every reachable canonical-prefix context: all prompts and all
  // partial sums are covered by enumerating every prompt digit sequence.
  std::vector<TokenId> prompt(task.num_terms, 0);
  std::vector<bool> done(buckets, false);
  const auto visit = [&](std::span<const TokenId> pr) {
    std::vector<TokenId> prefix;
    for (std::size_t p = 0; p < task.canonical_length(); ++p) {
      const TokenId ref = task.reference_next(pr, prefix);
      const std::size_t b = pol.bucket(task.context_key(pr, prefix));
      if (!done[b]) {
        done[b] = true;
        std::mt19937_64 rng(derive_seed(prior.seed, 0xc0417ull, b));
        if (!task.is_arithmetic_slot(p)) {
          pol.row(b)[ref] += prior.routine_strength;
        } else if (uniform01(rng) < prior.misconception_rate) {
          TokenId wrong = static_cast<TokenId>(rng() % (task.modulus - 1));
          if (wrong >= ref) ++wrong;
          pol.row(b)[wrong] += prior.misconception_strength;
        } else {
          pol.row(b)[ref] += prior.arithmetic_strength;
        }
      }
      prefix.push_back(ref);
    }
  };
  while (true) {
    visit(prompt);
    std::size_t j = 0;
    while (j < prompt.size() && ++prompt[j] == task.modulus) prompt[j++] = 0;
    if (j == prompt.size()) break;
  }
  return pol;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Per-token bookkeeping the response record does not carry.
struct Trajectory {
  std::vector<TokenId> prompt;
  std::vector<std::size_t> buckets;
  std::vector<double> old_logprobs;
};

struct SampledGroup {
  RolloutGroup group;
  std::vector<Trajectory> trajectories;
};

inline std::pair<Response, Trajectory> sample_response(const ToyPolicy& policy, const ToyTask& task,
                                                       std::span<const TokenId> prompt,
                                                       std::mt19937_64& rng) {
  Response resp;
  Trajectory traj;
  traj.prompt.assign(prompt.begin(), prompt.end());
  std::vector<TokenId> prefix;
  while (prefix.size() < task.max_length) {
    const std::size_t b = policy.bucket(task.context_key(prompt, prefix));
    const auto p = policy.probs(b);
    double h = 0.0;
    for (double q : p)
      if (q > 0.0) h -= q * std::log(q);
    const double u = uniform01(rng);
    double acc = 0.0;
    TokenId tok = static_cast<TokenId>(p.size() - 1);
    for (std::size_t v = 0; v < p.size(); ++v) {
      acc += p[v];
      if (u < acc) {
        tok = static_cast<TokenId>(v);
        break;
      }
    }
    resp.tokens.push_back({tok, h});
    traj.buckets.push_back(b);
    traj.old_logprobs.push_back(policy.log_prob(b, tok));
    prefix.push_back(tok);
    if (tok == task.eos()) break;
  }
  resp.correct = task.verify(prompt, prefix);
  resp.reward = resp.correct ? 1.0 : 0.0;
  return {std::move(resp), std::move(traj)};
}

/// G responses to one prompt. The stream seed fully determines the group.
inline SampledGroup generate_rollouts(const ToyPolicy& policy, const ToyTask& task,
                                      std::span<const TokenId> prompt, std::size_t group_size,
                                      std::uint64_t seed) {
  if (group_size < 2) throw std::invalid_argument("generate_rollouts: G must be >= 2");
  SampledGroup out;
  out.group.query_id = std::to_string(seed);
  for (std::size_t i = 0; i < group_size; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    auto [resp, traj] = sample_response(policy, task, prompt, rng);
    out.group.responses.push_back(std::move(resp));
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surrogate and its gradient w.r.t. policy parameters
// ---------------------------------------------------------------------------

inline std::vector<PolicyEvals> evaluate_policy(const ToyPolicy& policy, const SampledGroup& sg,
                                                const std::vector<std::vector<double>>* ref = nullptr) {
  std::vector<PolicyEvals> evals(sg.trajectories.size());
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const auto& tr = sg.trajectories[i];
    const auto& toks = sg.group.responses[i].tokens;
    evals[i].old_logprobs = tr.old_logprobs;
    evals[i].new_logprobs.resize(toks.size());
    for (std::size_t j = 0; j < toks.size(); ++j)
      evals[i].new_logprobs[j] = policy.log_prob(tr.buckets[j], toks[j].token_id);
    if (ref) evals[i].ref_logprobs = (*ref)[i];
  }
  return evals;
}

/// Surrogate loss of a group under `policy`, accumulating d(loss)/d(params)
/// into `grad` when given.
inline SurrogateResult surrogate_with_gradient(const ToyPolicy& policy, const SampledGroup& sg,
                                               const GrpoConfig& cfg, std::span<double> grad = {},
                                               const std::vector<std::vector<double>>* ref = nullptr) {
  const auto evals = evaluate_policy(policy, sg, ref);
  auto res = surrogate_loss(sg.group, evals, cfg);
  if (grad.empty()) return res;
  if (grad.size() != policy.num_params())
    throw std::invalid_argument("surrogate_with_gradient: gradient buffer size mismatch");
  const double inv_t = 1.0 / policy.temperature();
  const std::size_t vocab = policy.vocab();
  for (std::size_t i = 0; i < sg.trajectories.size(); ++i) {
    const auto& tr = sg.trajectories[i];
    const auto& toks = sg.group.responses[i].tokens;
    for (std::size_t j = 0; j < toks.size(); ++j) {
      const double g = res.dloss_dlogp[i][j];
      if (g == 0.0) continue;
      const std::size_t b = tr.buckets[j];
      const auto p = policy.probs(b);
      // d log softmax(row / T)[a] / d row[v] = (1[v = a] - p[v]) / T
      for (std::size_t v = 0; v < vocab; ++v) grad[b * vocab + v] -= g * p[v] * inv_t;
      grad[b * vocab + toks[j].token_id] += g * inv_t;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Mode { Grpo, Less };

inline const char* mode_name(Mode m) noexcept { return m == Mode::Grpo ? "grpo" : "less"; }

struct TrainConfig {
  ToyTask task;
  PriorConfig prior;
  ShapingConfig shaping;
  GrpoConfig grpo;
  std::size_t buckets = 2048;
  std::size_t group_size = 8;
  std::size_t prompts_per_step = 16;
  std::size_t steps = 300;
  std::size_t minibatches = 4;  // gradient steps per batch; groups dealt round-robin
  // Step size on the objective summed over a minibatch's groups; each group
  // already carries the 1/G and 1/|o| factors, hence the large value.
  double learning_rate = 20.0;
  std::size_t eval_prompts = 64;
  std::size_t eval_samples = 8;
  std::uint64_t seed = 0;
};

struct StepMetrics {
  std::size_t step = 0;
  double accuracy = 0.0;
  double overlap_correct_only = 0.0;
  std::optional<double> entropy_ratio;  // mean over two-sided groups
  double worst = 0.0;                   // worst@G over the step's groups
  double stddev = 0.0;                  // std@G over the step's groups
  double clip_fraction = 0.0;
  // Mean |shaped advantage| per token category, pooled over the step.
  double mass_high = 0.0;
  double mass_frag = 0.0;
  double mass_seg = 0.0;
};

struct EvalMetrics {
  SampleMetrics samples;
  double overlap_correct_only = 0.0;
  std::optional<double> entropy_ratio;
};

struct TrainRun {
  TrainConfig config;
  Mode mode = Mode::Grpo;
  std::vector<StepMetrics> metrics;
  std::optional<EvalMetrics> final_eval;
};

/// Numerical guard tripped during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fills base advantages and, in LESS mode, shaped advantages. GRPO mode
/// leaves `shaped` empty so the surrogate uses the raw group advantage.
inline std::optional<GroupShapingTrace> prepare_advantages(RolloutGroup& group, Mode mode,
                                                           const TrainConfig& cfg) {
  assign_base_advantages(group, cfg.grpo);
  if (mode == Mode::Grpo) return std::nullopt;
  return shape_group_in_place(group, cfg.shaping);
}

namespace detail {

inline double shaped_at(const Response& r, std::size_t j) {
  return r.shaped ? (*r.shaped)[j] : *r.base_advantage;
}

inline StepMetrics summarize_step(const std::vector<SampledGroup>& groups,
                                  const std::vector<std::optional<GroupShapingTrace>>& traces,
                                  const ShapingConfig& shaping) {
  StepMetrics m;
  OverlapMass mass;
  double ratio_sum = 0.0;
  std::size_t ratio_n = 0;
  std::vector<std::vector<double>> scores;
  double acc = 0.0;
  std::size_t n_resp = 0;
  double sum_high = 0.0, sum_frag = 0.0, sum_seg = 0.0;
  std::size_t n_high = 0, n_frag = 0, n_seg = 0;

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g].group;
    std::vector<double> row;
    for (const auto& r : grp.responses) {
      row.push_back(r.reward);
      acc += r.reward;
      ++n_resp;
    }
    scores.push_back(std::move(row));
    if (const auto er = entropy_ratio(grp)) {
      ratio_sum += *er;
      ++ratio_n;
    }
    // Overlap is measured the same way in both modes; LESS reuses its trace.
    if (traces[g] && !traces[g]->structures.empty())
      mass += overlap_ratios(traces[g]->structures, traces[g]->registry).mass;
    else
      mass += overlap_ratios(grp, shaping.h, shaping.min_seg_len).mass;
    if (traces[g]) {
      for (std::size_t i = 0; i < grp.responses.size(); ++i) {
        const auto& br = traces[g]->branches[i];
        for (std::size_t j = 0; j < br.size(); ++j) {
          const double a = std::fabs(shaped_at(grp.responses[i], j));
          switch (br[j]) {
            case ShapeBranch::High: sum_high += a; ++n_high; break;
            case ShapeBranch::FragCorrect:
            case ShapeBranch::FragIncorrect: sum_frag += a; ++n_frag; break;
            default: sum_seg += a; ++n_seg; break;
          }
        }
      }
    }
  }
  m.accuracy = n_resp ? acc / static_cast<double>(n_resp) : 0.0;
  m.overlap_correct_only = OverlapRatios::from(mass).correct_only;
  if (ratio_n) m.entropy_ratio = ratio_sum / static_cast<double>(ratio_n);
  if (!scores.empty()) {
    const auto sm = sample_metrics(scores, scores.front().size());
    m.worst = sm.worst;
    m.stddev = sm.stddev;
  }
  m.mass_high = n_high ? sum_high / static_cast<double>(n_high) : 0.0;
  m.mass_frag = n_frag ? sum_frag / static_cast<double>(n_frag) : 0.0;
  m.mass_seg = n_seg ? sum_seg / static_cast<double>(n_seg) : 0.0;
  return m;
}

}  // namespace detail

/// Samples K responses for each prompt and reports avg/worst/std@K plus the
/// correct-only overlap ratio of the K-sample groups.
inline EvalMetrics evaluate(const ToyPolicy& policy, const ToyTask& task,
                            std::span<const std::vector<TokenId>> prompts, std::size_t k,
                            std::uint64_t seed, const ShapingConfig& shaping = {}) {
  if (k < 1) throw std::invalid_argument("evaluate: K must be >= 1");
  if (prompts.empty()) throw std::invalid_argument("evaluate: no prompts");
  EvalMetrics out;
  std::vector<std::vector<double>> scores;
  OverlapMass mass;
  double ratio_sum = 0.0;
  std::size_t ratio_n = 0;
  for (std::size_t q = 0; q < prompts.size(); ++q) {
    RolloutGroup grp;
    std::vector<double> row;
    for (std::size_t i = 0; i < k; ++i) {
      std::mt19937_64 rng(derive_seed(seed, 0xe7a1ull, q, i));
      auto sampled = sample_response(policy, task, prompts[q], rng);
      row.push_back(sampled.first.reward);
      grp.responses.push_back(std::move(sampled.first));
    }
    scores.push_back(std::move(row));
    if (k >= 2) {
      mass += overlap_ratios(grp, shaping.h, shaping.min_seg_len).mass;
      if (const auto er = entropy_ratio(grp)) {
        ratio_sum += *er;
        ++ratio_n;
      }
    }
  }
  out.samples = sample_metrics(scores, k);
  out.overlap_correct_only = OverlapRatios::from(mass).correct_only;
  if (ratio_n) out.entropy_ratio = ratio_sum / static_cast<double>(ratio_n);
  return out;
}

/// Fixed evaluation prompt set for a config (disjoint index range from training).
inline std::vector<std::vector<TokenId>> eval_prompts(const TrainConfig& cfg) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t q = 0; q < cfg.eval_prompts; ++q)
    out.push_back(cfg.task.instance((std::uint64_t{1} << 40) + q));
  return out;
}

inline void validate(const TrainConfig& cfg) {
  cfg.task.validate();
  cfg.shaping.validate();
  cfg.grpo.validate();
  if (cfg.group_size < 2) throw std::invalid_argument("TrainConfig: group_size >= 2");
  if (cfg.prompts_per_step < 1) throw std::invalid_argument("TrainConfig: prompts_per_step >= 1");
  if (cfg.minibatches < 1 || cfg.minibatches > cfg.prompts_per_step)
    throw std::invalid_argument("TrainConfig: minibatches in [1, prompts_per_step]");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate > 0");
  if (cfg.buckets < 1) throw std::invalid_argument("TrainConfig: buckets >= 1");
}

/// Runs `cfg.steps` training steps on `policy` in place.
///
/// Each step samples prompts, generates one group per prompt from the current
/// (old) policy, computes advantages, then takes one gradient ascent step per
/// minibatch on the clipped surrogate summed over that minibatch's groups.
/// Later minibatches see a policy that has already moved, so the ratio and
/// clipping are live.
inline TrainRun train(ToyPolicy& policy, const TrainConfig& cfg, Mode mode) {
  validate(cfg);
  if (policy.vocab() != cfg.task.vocab_size())
    throw std::invalid_argument("train: policy vocabulary does not match task");
  TrainRun run;
  run.config = cfg;
  run.mode = mode;

  std::vector<double> grad(policy.num_params());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<SampledGroup> groups;
    std::vector<std::optional<GroupShapingTrace>> traces;
    groups.reserve(cfg.prompts_per_step);
    for (std::size_t q = 0; q < cfg.prompts_per_step; ++q) {
      const std::uint64_t prompt_index = derive_seed(cfg.seed, 0x9a11ull, step, q) >> 24;
      const auto prompt = cfg.task.instance(prompt_index);
      groups.push_back(generate_rollouts(policy, cfg.task, prompt, cfg.group_size,
                                         derive_seed(cfg.seed, 0x5a3ull, step, q)));
      traces.push_back(prepare_advantages(groups.back().group, mode, cfg));
    }

    double clip_sum = 0.0;
    for (std::size_t u = 0; u < cfg.minibatches; ++u) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t q = u; q < groups.size(); q += cfg.minibatches) {
        const auto res = surrogate_with_gradient(policy, groups[q], cfg.grpo, grad);
        clip_sum += res.clip_fraction;
      }
      auto params = policy.params();
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= cfg.learning_rate * grad[k];
    }

    auto m = detail::summarize_step(groups, traces, cfg.shaping);
    m.step = step + 1;
    m.clip_fraction = clip_sum / static_cast<double>(groups.size());
    if (!std::isfinite(m.accuracy) || !policy.finite()) {
      throw DivergenceError("training diverged at step " + std::to_string(step + 1) +
                            " (mode " + mode_name(mode) + ", seed " + std::to_string(cfg.seed) +
                            "): " + (policy.finite() ? "accuracy is NaN" : "non-finite parameters"));
    }
    run.metrics.push_back(m);
  }
  return run;
}

/// Builds the pretrained policy for a config, trains it, and evaluates the result.
inline TrainRun run_experiment(const TrainConfig& cfg, Mode mode) {
  auto policy = pretrained_policy(cfg.task, cfg.buckets, cfg.prior);
  auto run = train(policy, cfg, mode);
  const auto prompts = eval_prompts(cfg);
  run.final_eval = evaluate(policy, cfg.task, prompts, cfg.eval_samples,
                            derive_seed(cfg.seed, 0xf17a1ull), cfg.shaping);
  return run;
}

}  // namespace less::sim
