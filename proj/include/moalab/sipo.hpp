#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moalab/align.hpp"
#include "moalab/mod_decode.hpp"
#include "moalab/prefdata.hpp"

namespace moalab {

// Candidate produced by the sampling/refinement stages, scored by the
// per-objective implicit-reward scorers (rewards_pi) and the weight-merged
// scorers (rewards_w) before filtering.
struct ParetoCandidate {
  PromptId prompt = 0;
  Response y;
  WeightVector source_weight;
  bool refined = false;
  std::vector<double> rewards_pi;
  std::vector<double> rewards_w;
};

enum class RefinerKind { noop, edit_search, external_prompt };

// Re-alignment pair designs. yc_vs_both is the default: y_c against each
// original. The alternatives mirror the preference-design ablations.
enum class PairMode { yc_vs_both, yc_vs_yw, yc_yw_plus_ywyl, ywyl_only };

// Hook for driving a real text refiner from the rendered prompt templates.
// Never exercised by the test suite.
class ExternalRefiner {
 public:
  virtual ~ExternalRefiner() = default;
  virtual std::string review(const std::string& rendered_review_prompt) = 0;
  virtual Response rewrite(const std::string& rendered_rewrite_prompt,
                           const Response& original) = 0;
};

struct SipoConfig {
  std::vector<WeightVector> weight_grid;               // sampling weights (default 6-point 2-obj)
  std::vector<WeightVector> filter_grid;               // merged-scorer weights; empty = weight_grid
  WeightVector reviewer_weight;                        // w_e; empty = vertex of objective 0
  RefinerKind refiner = RefinerKind::edit_search;
  int refine_max_iters = 2;
  ImplicitRewardMode implicit_mode = ImplicitRewardMode::dpo_ratio;
  double beta = 0.1;
  double temperature = 0.8;
  std::int64_t max_conflicts = 2500;                   // per-round instance budget
  PairMode pair_mode = PairMode::yc_vs_both;
  bool filter_random = false;                          // ablation: random pick, no Pareto filter
  bool use_nonconflicting = false;                     // ablation: run on non-conflicting instances
  std::string template_pair = "safety_helpfulness";    // prompt-template family for external mode
  double realign_learning_rate = 0.005;                // re-alignment runs gentler than stage one
  int realign_steps = 600;
  ExternalRefiner* external = nullptr;
  std::uint64_t seed = 0;

  void resolve_defaults(std::size_t n_objectives);
};

// Non-conflicting re-alignment pair: y_c preferred over y_l on every objective.
struct ConflictPair {
  PromptId prompt = 0;
  Response y_c;
  Response y_l;
  std::vector<int> p;  // all +1 by construction
};

// One candidate per weight in config.weight_grid, generated by mod_generate.
std::vector<ParetoCandidate> stage1_sample(std::span<const TabularPolicy> policies,
                                           const SipoConfig& config, PromptId prompt, Rng& rng);

// noop: unchanged. edit_search: steepest-ascent over single-token
// substitutions on the reviewer-weighted implicit reward, up to max_iters
// passes; never returns a candidate scoring below its input. external_prompt:
// renders the prompt templates and delegates to the attached refiner
// (ExternalRefinerUnavailable without one).
ParetoCandidate stage2_refine(const ParetoCandidate& candidate,
                              std::span<const TabularPolicy> policies, const TabularPolicy& ref,
                              const SipoConfig& config, Rng& rng);

// Reviewer-weighted implicit-reward score used by edit_search.
double reviewer_score(const Response& y, PromptId prompt, std::span<const TabularPolicy> policies,
                      const TabularPolicy& ref, const SipoConfig& config);

// Keeps candidates whose reward under every scorer (N per-objective + M
// merged) strictly exceeds that scorer's reward for both originals; among
// survivors returns the largest mean reward, ties broken by lexicographically
// smallest token sequence. Empty optional when nothing survives.
std::optional<Response> stage3_filter(std::span<const ParetoCandidate> candidates,
                                      const PreferenceInstance& inst,
                                      std::span<const TabularPolicy> policies,
                                      std::span<const TabularPolicy> merged_scorers,
                                      const TabularPolicy& ref, const SipoConfig& config);

// Re-alignment pairs for a resolved instance. yc_vs_both: (y_c,y_a),(y_c,y_b).
// yc_vs_yw: y_c against each objective's preferred original (deduplicated).
// Errors: DegeneratePair when y_c equals an original.
std::vector<ConflictPair> build_conflict_pairs(const PreferenceInstance& inst, const Response& y_c,
                                               PairMode mode = PairMode::yc_vs_both);

PreferenceInstance to_instance(const ConflictPair& pair);

struct SipoInstanceRecord {
  std::size_t dataset_index = 0;
  Response y_c;
  RewardVector truth_yc;  // ground-truth rewards for reporting
  RewardVector truth_ya;
  RewardVector truth_yb;
};

struct SipoRoundReport {
  std::int64_t instances_considered = 0;  // conflicting (or selected) instances processed
  std::int64_t candidates_generated = 0;
  std::int64_t resolved = 0;              // instances contributing a y_c
  std::int64_t improvement_pairs = 0;     // |D^c|
  RewardVector mean_truth_yc;
  RewardVector mean_truth_ya;
  RewardVector mean_truth_yb;
  double truth_dominance_fraction = 0.0;  // y_c >= both originals on every objective
  std::vector<SipoInstanceRecord> records;
  std::vector<std::string> warnings;
};

struct SipoRoundResult {
  std::vector<TabularPolicy> policies;
  PreferenceDataset improvement_set;  // D^c as labeled instances
  SipoRoundReport report;
};

// One full self-improvement round: stages 1-3 over the (budgeted) conflicting
// instances, D^c construction, then per-objective re-alignment with
// nll_dpo_loss anchored at the incoming policies. An empty D^c returns the
// policies unchanged with an EmptyImprovementSet warning in the report.
SipoRoundResult run_sipo_round(std::span<const TabularPolicy> policies, const TabularPolicy& ref,
                               const PreferenceDataset& dataset,
                               std::span<const RewardSpec> specs, const SipoConfig& config,
                               const AlignConfig& align_config);

void write_round_report_json(const SipoRoundReport& report, const std::filesystem::path& path);

// Prompt-template assets for the external refiner, addressable by name:
// {safety_helpfulness, correctness_verbosity} x {review, rewrite}.
// Directory resolution: explicit argument, else MOALAB_ASSETS env var, else
// the build-time default asset directory.
std::string prompt_template(const std::string& name, const std::string& assets_dir = "");

// Rendered (review, rewrite) prompts for a candidate, with {raw_prompt},
// {response} and {review} placeholders substituted.
struct RenderedPrompts {
  std::string review;
  std::string rewrite;
};
RenderedPrompts render_refiner_prompts(const PreferenceInstance& inst, const Response& candidate,
                                       const std::string& review_text,
                                       const SipoConfig& config);

}  // namespace moalab
