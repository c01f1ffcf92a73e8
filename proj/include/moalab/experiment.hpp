#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moalab/align.hpp"
#include "moalab/pareto.hpp"
#include "moalab/prefdata.hpp"
#include "moalab/sipo.hpp"

#include <nlohmann/json.hpp>

namespace moalab {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  std::int64_t pool_size = 4000;
  std::int64_t subsample_size = 240;
  double conflict_target = -1.0;       // <0 = use the generated pool unmodified
  std::vector<double> conflict_ratios = {0.0, 0.3, 0.6, 0.9};
  std::string jsonl_path;              // when set, load instead of generating
};

// Everything a run needs; serialized verbatim into each report manifest so a
// run is reproducible from the manifest alone.
struct ExperimentConfig {
  EnvSpec env;
  std::string reward_preset = "toy-2obj";
  std::vector<RewardSpec> custom_rewards;  // overrides the preset when nonempty
  DatasetConfig dataset;
  std::vector<WeightVector> weight_grid;            // empty = 6-point 2-objective grid
  std::vector<std::string> methods = {"soups", "lw", "mod", "sipo"};
  AlignConfig align;
  SipoConfig sipo;
  int sipo_rounds = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "out";

  void validate() const;
  std::vector<RewardSpec> rewards() const;
  std::vector<WeightVector> grid() const;
};

ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

enum class Ablation {
  sipo_minus_refine,
  sipo_minus_filter,
  pref_design_yc_yw,
  pref_design_chain,
  pref_design_ywyl,
  sipo_plus_soups,
  second_round,
  nonconflict_sipo,
};

Ablation ablation_from_name(const std::string& name);  // UnknownAblation
std::string ablation_name(Ablation ablation);

double median(std::vector<double> values);

// One trained-and-evaluated front: fixed method, conflict ratio and seed.
struct SweepCell {
  std::string method;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<FrontRow> rows;
  double hypervolume = 0.0;  // against the report-wide shared reference
};

struct SweepReport {
  std::vector<SweepCell> cells;
  RewardVector reference;  // componentwise min over every row, minus 1e-6
  // method -> ratio -> statistic (medians over seeds; means over weights).
  std::map<std::string, std::map<double, double>> median_hypervolume;
  std::map<std::string, std::map<double, RewardVector>> mean_rewards;
  std::map<std::string, std::map<double, RewardVector>> avg_decrease_vs_zero;
  std::map<std::string, std::map<double, RewardVector>> steerability_range;
  std::vector<std::filesystem::path> files;
};

// Conflict-ratio sweep: subsample at each ratio x seed, train the configured
// methods, evaluate a front per cell, and compare hypervolumes against one
// shared reference across the whole report.
SweepReport run_conflict_sweep(const ExperimentConfig& config);

struct CompareCell {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<FrontRow> rows;
  double hypervolume = 0.0;
};

struct CompareReport {
  std::vector<CompareCell> cells;
  RewardVector reference;
  std::map<std::string, double> median_hypervolume;
  // method -> per-weight componentwise median reward over seeds.
  std::map<std::string, std::vector<RewardVector>> median_rewards;
  // (a, b) -> mean over weights of median_a - median_b, per objective.
  std::map<std::string, std::map<std::string, RewardVector>> avg_improvement;
  std::vector<SipoRoundReport> sipo_reports;  // final round per seed when sipo runs
  std::vector<std::filesystem::path> files;
};

CompareReport run_baseline_comparison(const ExperimentConfig& config);

struct AblationReport {
  std::string name;
  CompareReport base;
  CompareReport variant;
  std::vector<std::string> changed_fields;  // config-diff audit
  std::vector<std::filesystem::path> files;
};

AblationReport run_ablation(const ExperimentConfig& config, Ablation ablation);

// Applies only the named ablation's field changes to a copy of the config.
ExperimentConfig ablation_variant_config(const ExperimentConfig& base, Ablation ablation);
// Dotted paths of JSON leaves that differ between the two configs.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

// manifest.json: resolved config, seed list and emitted files; no wall-clock
// content so reruns are byte-identical.
void write_manifest(const ExperimentConfig& config, const std::vector<std::filesystem::path>& files,
                    const std::filesystem::path& out_dir, const std::string& command);

}  // namespace moalab
