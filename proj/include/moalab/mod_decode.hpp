#pragma once

#include <span>
#include <vector>

#include "moalab/policy.hpp"
#include "moalab/weights.hpp"

namespace moalab {

// Token-level combination of per-objective policies under a preference weight:
// p(t) proportional to prod_i pi_i(t|prefix)^{w_i}.
struct DecoderEnsemble {
  std::vector<TabularPolicy> policies;
  WeightVector w;
  // Optional reference subtraction: combine log pi_ref + sum_i w_i
  // (log pi_i - log pi_ref) instead. With simplex weights over normalized
  // per-state distributions the two agree; the flag exists for parity with
  // reference-aware formulations.
  bool subtract_reference = false;
  TabularPolicy reference;

  static DecoderEnsemble make(std::vector<TabularPolicy> policies, WeightVector w);
  const EnvSpec& env() const { return policies.front().env(); }
};

// softmax of sum_i w_i * log pi_i(.|prefix); sums to 1 within 1e-12. Zero
// weights are skipped so vertices reproduce the single policy exactly.
std::vector<double> mod_next_distribution(const DecoderEnsemble& ens, PromptId prompt,
                                          std::span<const TokenId> prefix);

// Combined log-distribution over the next token (normalized); the sampling and
// exact-evaluation paths share it.
void mod_next_log_distribution(const DecoderEnsemble& ens, PromptId prompt,
                               std::span<const TokenId> prefix, std::span<double> out);

// Autoregressive sampling from mod_next_distribution; temperature semantics
// match sample_response (0 = greedy, lowest-index ties).
Response mod_generate(const DecoderEnsemble& ens, PromptId prompt, double temperature, Rng& rng);

}  // namespace moalab
