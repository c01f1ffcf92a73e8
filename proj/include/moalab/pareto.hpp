#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moalab/mod_decode.hpp"
#include "moalab/policy.hpp"
#include "moalab/rewards.hpp"

namespace moalab {

// Anything that can be evaluated as a response distribution.
using EvalSystem = std::variant<TabularPolicy, DecoderEnsemble>;

const EnvSpec& system_env(const EvalSystem& system);
void system_next_log_distribution(const EvalSystem& system, PromptId prompt,
                                  std::span<const TokenId> prefix, std::span<double> out);
Response system_sample(const EvalSystem& system, PromptId prompt, double temperature, Rng& rng);

struct ExpectedRewards {
  RewardVector mean;
  RewardVector stderr_;  // zero in exact mode
};

// sum_y p(y|x) r*(x,y), averaged over prompts. Needs an enumerable space.
ExpectedRewards expected_rewards_exact(const EvalSystem& system,
                                       std::span<const RewardSpec> specs, const EnvSpec& env);

// Mean of n seeded samples with per-objective standard error of the mean.
ExpectedRewards expected_rewards_monte_carlo(const EvalSystem& system,
                                             std::span<const RewardSpec> specs,
                                             const EnvSpec& env, std::int64_t n, Rng& rng);

// Maximal set under componentwise dominance (a dominates b iff a >= b in every
// coordinate and a > b in at least one); keeps input order.
std::vector<std::size_t> pareto_front_indices(std::span<const RewardVector> points);
std::vector<RewardVector> pareto_front(std::span<const RewardVector> points);

// Lebesgue measure of the region dominated by the front relative to the
// reference point: sorted sweep in 2-D, inclusion-exclusion for 3 <= N <= 4.
// Errors: ReferenceViolation if any point fails to weakly dominate reference.
double hypervolume(std::span<const RewardVector> front, const RewardVector& reference);

struct FrontRow {
  std::string method;
  int weight_index = 0;
  WeightVector weight;
  RewardVector reward;
  RewardVector stderr_;
};

struct FrontTable {
  std::vector<FrontRow> rows;
  std::map<std::string, double> hypervolume_by_method;
  RewardVector reference;  // componentwise min over all rows minus 1e-6
};

struct MethodSystems {
  std::string tag;
  std::vector<EvalSystem> systems;  // one per weight in the grid
};

enum class EvalMode { exact, monte_carlo };

FrontTable front_table(std::span<const MethodSystems> methods,
                       std::span<const WeightVector> grid, std::span<const RewardSpec> specs,
                       const EnvSpec& env, EvalMode mode = EvalMode::exact,
                       std::int64_t mc_samples = 100'000, std::uint64_t mc_seed = 0);

// CSV schema: method,weight_index,w_1..w_N,r_1..r_N,stderr_1..stderr_N.
void write_front_csv(const FrontTable& table, const std::filesystem::path& path);
// CSV schema: method,hypervolume plus a reference row.
void write_hypervolume_csv(const FrontTable& table, const std::filesystem::path& path);

}  // namespace moalab
