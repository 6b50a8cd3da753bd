#pragma once

// Group-relative advantages and the clipped surrogate objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "less/rollout.hpp"

namespace less {

enum class StdKind { Population, Sample };

struct GrpoConfig {
  double epsilon_low = 0.2;
  double epsilon_high = 0.28;
  double kl_coeff = 0.0;
  double std_floor = 1e-8;
  StdKind std_kind = StdKind::Population;

  void validate() const {
    if (!(epsilon_low > 0.0 && epsilon_low <= epsilon_high && epsilon_high < 1.0))
      throw std::invalid_argument("GrpoConfig: need 0 < epsilon_low <= epsilon_high < 1");
    if (!(kl_coeff >= 0.0)) throw std::invalid_argument("GrpoConfig: kl_coeff must be >= 0");
    if (!(std_floor > 0.0)) throw std::invalid_argument("GrpoConfig: std_floor must be > 0");
  }
};

/// Standardized rewards (r - mean) / std. Zero-variance groups map to zeros.
inline std::vector<double> group_advantages(std::span<const double> rewards,
                                            double std_floor = 1e-8,
                                            StdKind kind = StdKind::Population) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::domain_error("group_advantages: need at least 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = kind == StdKind::Population ? static_cast<double>(g)
                                                   : static_cast<double>(g - 1);
  const double sd = std::sqrt(ss / denom);

  std::vector<double> adv(g, 0.0);
  if (sd < std_floor) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

/// Fills base_advantage on every response of the group from its rewards.
/// Undersized groups (G < 2) receive zero advantage.
inline void assign_base_advantages(RolloutGroup& group, const GrpoConfig& cfg = {}) {
  if (group.responses.size() < 2) {
    for (auto& r : group.responses) r.base_advantage = 0.0;
    return;
  }
  std::vector<double> rewards;
  rewards.reserve(group.responses.size());
  for (const auto& r : group.responses) rewards.push_back(r.reward);
  const auto adv = group_advantages(rewards, cfg.std_floor, cfg.std_kind);
  for (std::size_t i = 0; i < adv.size(); ++i) group.responses[i].base_advantage = adv[i];
}

struct PolicyEvals {
  std::vector<double> old_logprobs;
  std::vector<double> new_logprobs;
  std::optional<std::vector<double>> ref_logprobs;
};

struct SurrogateResult {
  double objective = 0.0;  // clipped objective, before the KL penalty
  double kl = 0.0;         // token- then response-averaged KL estimate
  double loss = 0.0;       // -objective + kl_coeff * kl
  double clip_fraction = 0.0;
  std::size_t num_tokens = 0;
  // d(loss)/d(new_logprob) for every token, per response.
  std::vector<std::vector<double>> dloss_dlogp;
};

/// Token-factored clipped surrogate over one group.
///
/// Per token: ratio = exp(new - old), term = min(ratio * A, clip(ratio) * A)
/// with clip range [1 - epsilon_low, 1 + epsilon_high]. Terms are averaged
/// over each response's tokens, then over the group. The per-token advantage
/// is `shaped` when present, else the response's base advantage.
inline SurrogateResult surrogate_loss(const RolloutGroup& group,
                                      std::span<const PolicyEvals> evals,
                                      const GrpoConfig& cfg) {
  cfg.validate();
  const std::size_t g = group.responses.size();
  if (evals.size() != g) throw std::invalid_argument("surrogate_loss: one PolicyEvals per response");
  if (g == 0) throw std::invalid_argument("surrogate_loss: empty group");
  const bool use_kl = cfg.kl_coeff > 0.0;

  SurrogateResult out;
  out.dloss_dlogp.resize(g);
  std::size_t clipped = 0;

  for (std::size_t i = 0; i < g; ++i) {
    const auto& resp = group.responses[i];
    const auto& ev = evals[i];
    const std::size_t n = resp.tokens.size();
    if (ev.old_logprobs.size() != n || ev.new_logprobs.size() != n)
      throw std::invalid_argument("surrogate_loss: logprob length mismatch in response " +
                                  std::to_string(i));
    if (use_kl) {
      if (!ev.ref_logprobs)
        throw std::invalid_argument("surrogate_loss: kl_coeff > 0 requires ref_logprobs");
      if (ev.ref_logprobs->size() != n)
        throw std::invalid_argument("surrogate_loss: ref logprob length mismatch in response " +
                                    std::to_string(i));
    }
    if (!resp.shaped && !resp.base_advantage)
      throw ContractError("surrogate_loss: response " + std::to_string(i) + " has no advantage");

    const double w = 1.0 / (static_cast<double>(g) * static_cast<double>(n));
    auto& grad = out.dloss_dlogp[i];
    grad.assign(n, 0.0);
    double resp_obj = 0.0;
    double resp_kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double adv = resp.shaped ? (*resp.shaped)[j] : *resp.base_advantage;
      const double ratio = std::exp(ev.new_logprobs[j] - ev.old_logprobs[j]);
      const double clipped_ratio =
          std::clamp(ratio, 1.0 - cfg.epsilon_low, 1.0 + cfg.epsilon_high);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped_ratio * adv;
      if (clipped_term < unclipped_term) {
        // Clipped branch wins; it is constant in the new logprob.
        resp_obj += clipped_term;
        ++clipped;
      } else {
        resp_obj += unclipped_term;
        grad[j] -= w * unclipped_term;  // d(ratio)/d(logp) = ratio
      }
      if (use_kl) {
        const double d = (*ev.ref_logprobs)[j] - ev.new_logprobs[j];
        resp_kl += std::exp(d) - d - 1.0;
        grad[j] += cfg.kl_coeff * w * (1.0 - std::exp(d));
      }
    }
    out.objective += w * resp_obj;
    out.kl += w * resp_kl;
    out.num_tokens += n;
  }
  out.loss = -out.objective + (use_kl ? cfg.kl_coeff * out.kl : 0.0);
  out.clip_fraction =
      out.num_tokens ? static_cast<double>(clipped) / static_cast<double>(out.num_tokens) : 0.0;
  return out;
}

}  // namespace less
