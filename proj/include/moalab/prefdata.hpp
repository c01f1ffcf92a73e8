#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moalab/env.hpp"
#include "moalab/policy.hpp"
#include "moalab/rewards.hpp"
#include "moalab/rng.hpp"

namespace moalab {

// One multi-objective preference record: p[i] = +1 iff y_b is preferred under
// objective i, -1 otherwise. Ties are rejected at labeling time, so labels are
// always a full {-1,+1} vector.
//
// Rows imported from real text corpora carry opaque strings instead of token
// arrays; they support conflict statistics only, not training.
struct PreferenceInstance {
  PromptId prompt = 0;
  Response y_a;  // dispreferred when p_i = +1
  Response y_b;
  std::string y_a_text;
  std::string y_b_text;
  std::vector<int> p;

  bool trainable() const { return !y_a.empty() && !y_b.empty(); }
};

using PreferenceDataset = std::vector<PreferenceInstance>;

struct DatasetStats {
  std::int64_t n_instances = 0;
  std::int64_t n_conflicting = 0;
  double conflict_ratio = 0.0;
  std::vector<double> label_balance;  // per-objective fraction of +1 labels
};

// Labels the pair by componentwise ground-truth comparison.
// Errors: TiedPreference when any objective scores the two responses equally.
PreferenceInstance label_instance(std::span<const RewardSpec> specs, PromptId prompt,
                                  const Response& y_a, const Response& y_b);

// True iff the objectives disagree (not all labels equal).
bool is_conflict(const PreferenceInstance& inst);

DatasetStats conflict_ratio(const PreferenceDataset& dataset);  // EmptyDataset

// Draws n tie-free pairs. Responses come from sampler (temperature 1) when
// given, otherwise token-uniform; prompts uniform over env.prompts. Tied or
// identical pairs are resampled; a stuck resample loop raises GenerationStalled.
PreferenceDataset generate_dataset(const EnvSpec& env, std::span<const RewardSpec> specs,
                                   std::int64_t n, const TabularPolicy* sampler, Rng& rng);

// Exactly round-half-up(target_ratio*size) conflicting instances, sampled
// uniformly without replacement within each stratum. InsufficientPool reports
// the shortfall.
PreferenceDataset subsample_with_conflict_ratio(const PreferenceDataset& dataset,
                                                double target_ratio, std::int64_t size,
                                                Rng& rng);

// JSONL rows: {"prompt": <id-or-string>, "y_a": [ints]|string,
//              "y_b": [ints]|string, "p": [-1|+1,...]}, one object per line.
// String prompts are assigned synthetic ids in order of first appearance.
// Errors: ParseError(line), SchemaError(line).
PreferenceDataset read_jsonl(const std::filesystem::path& path);
void write_jsonl(const PreferenceDataset& dataset, const std::filesystem::path& path);

}  // namespace moalab
