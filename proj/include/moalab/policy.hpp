#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "moalab/env.hpp"
#include "moalab/rng.hpp"
#include "moalab/weights.hpp"

namespace moalab {

// Tabular autoregressive policy: one logit row of size V for every
// (prompt, prefix-of-length-<L) state. The conditional at a state is the
// softmax of its row, so the policy can represent any distribution over the
// V^L response space exactly, gradients are exact, and parameter merging is a
// literal convex combination.
//
// Policies are immutable value types once built; training mutates a private
// copy through params().
class TabularPolicy {
 public:
  TabularPolicy() = default;

  static TabularPolicy zeros(EnvSpec env);
  static TabularPolicy random_init(EnvSpec env, double stddev, Rng& rng);

  const EnvSpec& env() const { return env_; }
  std::int64_t states_per_prompt() const { return states_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  std::span<const double> logits_row(int prompt_idx, std::int64_t state) const;
  std::span<double> logits_row(int prompt_idx, std::int64_t state);

  std::int64_t row_offset(int prompt_idx, std::int64_t state) const {
    return (static_cast<std::int64_t>(prompt_idx) * states_ + state) * env_.vocab_size;
  }

  bool same_shape(const TabularPolicy& other) const;
  void check_finite() const;  // invariant: no NaN/Inf entries

 private:
  EnvSpec env_;
  std::int64_t states_ = 0;
  std::vector<double> params_;
};

// Logit row for the next token after `prefix`. Pure lookup.
// Errors: PromptNotFound, PrefixTooLong, TokenOutOfRange.
std::span<const double> next_logits(const TabularPolicy& policy, PromptId prompt,
                                    std::span<const TokenId> prefix);

// Sum over steps of log softmax(row)[y_t], log-sum-exp stabilized. Always <= 0.
double log_prob_seq(const TabularPolicy& policy, PromptId prompt, const Response& y);

// Length-L sample. temperature 0 = greedy argmax, ties to the lowest index;
// temperature > 0 scales logits by 1/temperature. Deterministic given rng state.
Response sample_response(const TabularPolicy& policy, PromptId prompt, double temperature,
                         Rng& rng);

// Elementwise convex combination sum_i w_i * theta_i. Zero-weight terms are
// skipped so simplex vertices reproduce the corresponding policy bit-exactly.
TabularPolicy merge_params(std::span<const TabularPolicy> policies, const WeightVector& w);

// Versioned JSON checkpoint (env spec + flat parameter array); doubles are
// written shortest-round-trip so load(save(p)) == p bit-exactly.
void save_checkpoint(const TabularPolicy& policy, const std::filesystem::path& path);
TabularPolicy load_checkpoint(const std::filesystem::path& path);

// Numerics shared by policy evaluation and the training losses.
double log_sum_exp(std::span<const double> values);
void softmax_into(std::span<const double> logits, std::span<double> out);

}  // namespace moalab
