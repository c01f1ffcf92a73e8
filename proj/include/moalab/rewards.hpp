#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "moalab/env.hpp"

namespace moalab {

using RewardVector = std::vector<double>;

enum class RewardKind {
  token_count_positive,  // +1 per token in token_set
  token_count_negative,  // -1 per token in token_set
  target_match,          // +1 per position matching target
  weighted_token_sum,    // sum of token_weights[y_t], per-prompt overrides allowed
};

// Synthetic ground-truth reward function r*_i. Deterministic, depends only on
// token content (plus prompt for per-prompt weighted_token_sum), and bounded
// by [-L*c, L*c] with c = bound_constant().
struct RewardSpec {
  std::string name;
  RewardKind kind = RewardKind::token_count_positive;
  std::vector<TokenId> token_set;
  Response target;
  std::vector<double> token_weights;
  std::map<PromptId, std::vector<double>> per_prompt_weights;

  void validate(const EnvSpec& env) const;  // InvalidRewardSpec
  double bound_constant() const;
};

double eval_reward(const RewardSpec& spec, PromptId prompt, const Response& y);
RewardVector eval_reward_vector(std::span<const RewardSpec> specs, PromptId prompt,
                                const Response& y);

// Built-in presets:
//   toy-2obj   r1 = count of {0,1,2}, r2 = -count of {6,7}           (V>=8)
//   toy-3obj   toy-2obj plus r3 = count of {4}                        (V>=8)
//   corr-verb  r1 = positional match of a fixed nonzero target,
//              r2 = count of nonzero tokens                           (V>=2)
std::vector<RewardSpec> reward_preset(const std::string& name, const EnvSpec& env);

}  // namespace moalab
