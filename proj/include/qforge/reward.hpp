#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "qforge/rollout.hpp"

namespace qforge {

// Reference implementations of the binary verifiable reward and the
// group-relative advantage/clipping arithmetic. Library-only: there is no
// training loop here.

struct RolloutGroup {
  std::vector<double> rewards;  // binary, one per rollout in the group
  double clip_eps = 0.2;
};

inline void validate_rollout_group(const RolloutGroup& g) {
  if (g.rewards.empty()) throw ValidationError("rollout group must be non-empty");
  if (g.clip_eps <= 0.0)
    throw ValidationError("rollout group clip_eps must be > 0");
  for (double r : g.rewards)
    if (r != 0.0 && r != 1.0)
      throw ValidationError("rollout group rewards must be binary");
}

inline int verifiable_reward(std::string_view pred, std::string_view gold,
                             const MatchPolicy& policy = {}) {
  return match_answer(pred, gold, policy) ? 1 : 0;
}

// (r_i - mean) / std with the population std over the group. All-equal
// groups carry no gradient signal, so zero std maps to all-zero advantages.
inline std::vector<double> normalize_advantages(
    const std::vector<double>& rewards) {
  if (rewards.empty())
    throw ValidationError("normalize_advantages: empty reward list");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  std::vector<double> out(rewards.size(), 0.0);
  if (var <= 0.0) return out;
  const double std_dev = std::sqrt(var);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    out[i] = (rewards[i] - mean) / std_dev;
  return out;
}

// min(s*A, clip(s, 1-eps, 1+eps)*A) for one rollout's probability ratio.
inline double grpo_clip_term(double ratio, double advantage, double eps) {
  if (eps <= 0.0) throw ValidationError("grpo_clip_term: eps must be > 0");
  if (ratio <= 0.0) throw ValidationError("grpo_clip_term: ratio must be > 0");
  double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

}  // namespace qforge
