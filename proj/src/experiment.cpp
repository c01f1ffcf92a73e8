#include "moalab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "moalab/csvio.hpp"

namespace moalab {

namespace {

constexpr const char* kVersion = "moalab 0.1.0";

template <typename T>
T json_get(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::invalid_config, std::string("field '") + key + "': " + e.what());
  }
}

// Typos in experiment configs should fail loudly, not silently fall back to
// defaults.
void check_known_keys(const Json& j, const char* where,
                      std::initializer_list<const char*> known) {
  if (!j.is_object()) raise(Errc::invalid_config, std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      raise(Errc::invalid_config, std::string("unknown field '") + key + "' in " + where);
    }
  }
}

std::vector<WeightVector> grid_from_json(const Json& j) {
  std::vector<WeightVector> grid;
  for (const auto& row : j) {
    grid.push_back(WeightVector::make(row.get<std::vector<double>>()));
  }
  return grid;
}

Json grid_to_json(const std::vector<WeightVector>& grid) {
  Json j = Json::array();
  for (const WeightVector& w : grid) j.push_back(w.w);
  return j;
}

std::string refiner_name(RefinerKind kind) {
  switch (kind) {
    case RefinerKind::noop: return "noop";
    case RefinerKind::edit_search: return "edit_search";
    case RefinerKind::external_prompt: return "external_prompt";
  }
  return "edit_search";
}

RefinerKind refiner_from_name(const std::string& name) {
  if (name == "noop") return RefinerKind::noop;
  if (name == "edit_search") return RefinerKind::edit_search;
  if (name == "external_prompt") return RefinerKind::external_prompt;
  raise(Errc::invalid_config, "unknown refiner '" + name + "'");
}

std::string pair_mode_name(PairMode mode) {
  switch (mode) {
    case PairMode::yc_vs_both: return "yc_vs_both";
    case PairMode::yc_vs_yw: return "yc_vs_yw";
    case PairMode::yc_yw_plus_ywyl: return "yc_yw_plus_ywyl";
    case PairMode::ywyl_only: return "ywyl_only";
  }
  return "yc_vs_both";
}

PairMode pair_mode_from_name(const std::string& name) {
  if (name == "yc_vs_both") return PairMode::yc_vs_both;
  if (name == "yc_vs_yw") return PairMode::yc_vs_yw;
  if (name == "yc_yw_plus_ywyl") return PairMode::yc_yw_plus_ywyl;
  if (name == "ywyl_only") return PairMode::ywyl_only;
  raise(Errc::invalid_config, "unknown pair mode '" + name + "'");
}

const std::set<std::string> kKnownMethods = {"soups", "lw", "modpo", "mod", "sipo", "sipo_soups"};

std::string reward_kind_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::token_count_positive: return "token_count_positive";
    case RewardKind::token_count_negative: return "token_count_negative";
    case RewardKind::target_match: return "target_match";
    case RewardKind::weighted_token_sum: return "weighted_token_sum";
  }
  return "token_count_positive";
}

RewardKind reward_kind_from_name(const std::string& name) {
  if (name == "token_count_positive") return RewardKind::token_count_positive;
  if (name == "token_count_negative") return RewardKind::token_count_negative;
  if (name == "target_match") return RewardKind::target_match;
  if (name == "weighted_token_sum") return RewardKind::weighted_token_sum;
  raise(Errc::invalid_config, "unknown reward kind '" + name + "'");
}

RewardSpec reward_spec_from_json(const Json& j) {
  check_known_keys(j, "reward spec",
                   {"name", "kind", "token_set", "target", "token_weights",
                    "per_prompt_weights"});
  RewardSpec spec;
  spec.name = json_get<std::string>(j, "name", "");
  if (spec.name.empty()) raise(Errc::invalid_config, "reward spec needs a name");
  spec.kind = reward_kind_from_name(json_get<std::string>(j, "kind", ""));
  spec.token_set = json_get<std::vector<TokenId>>(j, "token_set", {});
  spec.target = json_get<Response>(j, "target", {});
  spec.token_weights = json_get<std::vector<double>>(j, "token_weights", {});
  if (j.contains("per_prompt_weights")) {
    for (const auto& [key, value] : j.at("per_prompt_weights").items()) {
      spec.per_prompt_weights[static_cast<PromptId>(std::stol(key))] =
          value.get<std::vector<double>>();
    }
  }
  return spec;
}

Json reward_spec_to_json(const RewardSpec& spec) {
  Json j;
  j["name"] = spec.name;
  j["kind"] = reward_kind_name(spec.kind);
  if (!spec.token_set.empty()) j["token_set"] = spec.token_set;
  if (!spec.target.empty()) j["target"] = spec.target;
  if (!spec.token_weights.empty()) j["token_weights"] = spec.token_weights;
  if (!spec.per_prompt_weights.empty()) {
    Json overrides;
    for (const auto& [prompt, weights] : spec.per_prompt_weights) {
      overrides[std::to_string(prompt)] = weights;
    }
    j["per_prompt_weights"] = std::move(overrides);
  }
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate();
  rewards();  // resolves and validates the preset
  if (seeds.empty()) raise(Errc::invalid_config, "need at least one seed");
  if (methods.empty()) raise(Errc::invalid_config, "need at least one method");
  for (const std::string& m : methods) {
    if (!kKnownMethods.count(m)) raise(Errc::invalid_config, "unknown method '" + m + "'");
  }
  if (dataset.pool_size < 1 || dataset.subsample_size < 1) {
    raise(Errc::invalid_config, "dataset sizes must be >= 1");
  }
  for (double r : dataset.conflict_ratios) {
    if (r < 0.0 || r > 1.0) raise(Errc::invalid_config, "conflict ratio outside [0,1]");
  }
  if (sipo_rounds < 1) raise(Errc::invalid_config, "sipo_rounds must be >= 1");
  for (const WeightVector& w : weight_grid) w.validate();
  if (out_dir.empty()) raise(Errc::invalid_config, "out_dir must be set");
}

std::vector<RewardSpec> ExperimentConfig::rewards() const {
  if (!custom_rewards.empty()) {
    for (const RewardSpec& spec : custom_rewards) spec.validate(env);
    return custom_rewards;
  }
  return moalab::reward_preset(reward_preset, env);
}

std::vector<WeightVector> ExperimentConfig::grid() const {
  if (!weight_grid.empty()) return weight_grid;
  const std::size_t n = rewards().size();
  if (n == 2) return two_objective_grid(6);
  std::vector<WeightVector> grid;
  for (std::size_t i = 0; i < n; ++i) grid.push_back(WeightVector::vertex(n, i));
  grid.push_back(WeightVector::make(std::vector<double>(n, 1.0 / static_cast<double>(n))));
  return grid;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  check_known_keys(j, "config",
                   {"env", "rewards", "dataset", "weight_grid", "methods", "align", "sipo",
                    "sipo_rounds", "seeds", "out_dir"});
  if (j.contains("env")) {
    const Json& je = j.at("env");
    check_known_keys(je, "env",
                     {"vocab_size", "response_len", "prompts", "seed", "enumeration_budget"});
    cfg.env.vocab_size = json_get<int>(je, "vocab_size", cfg.env.vocab_size);
    cfg.env.response_len = json_get<int>(je, "response_len", cfg.env.response_len);
    cfg.env.prompts = json_get<std::vector<PromptId>>(je, "prompts", cfg.env.prompts);
    cfg.env.seed = json_get<std::uint64_t>(je, "seed", cfg.env.seed);
    cfg.env.enumeration_budget =
        json_get<std::int64_t>(je, "enumeration_budget", cfg.env.enumeration_budget);
  }
  if (j.contains("rewards")) {
    const Json& jr = j.at("rewards");
    if (jr.is_string()) {
      cfg.reward_preset = jr.get<std::string>();
    } else if (jr.is_array()) {
      for (const Json& spec : jr) cfg.custom_rewards.push_back(reward_spec_from_json(spec));
    } else {
      raise(Errc::invalid_config, "rewards must be a preset name or a spec array");
    }
  }
  if (j.contains("dataset")) {
    const Json& jd = j.at("dataset");
    check_known_keys(jd, "dataset",
                     {"pool_size", "subsample_size", "conflict_target", "conflict_ratios",
                      "jsonl_path"});
    cfg.dataset.pool_size = json_get<std::int64_t>(jd, "pool_size", cfg.dataset.pool_size);
    cfg.dataset.subsample_size =
        json_get<std::int64_t>(jd, "subsample_size", cfg.dataset.subsample_size);
    cfg.dataset.conflict_target =
        json_get<double>(jd, "conflict_target", cfg.dataset.conflict_target);
    cfg.dataset.conflict_ratios =
        json_get<std::vector<double>>(jd, "conflict_ratios", cfg.dataset.conflict_ratios);
    cfg.dataset.jsonl_path = json_get<std::string>(jd, "jsonl_path", cfg.dataset.jsonl_path);
  }
  if (j.contains("weight_grid")) cfg.weight_grid = grid_from_json(j.at("weight_grid"));
  cfg.methods = json_get<std::vector<std::string>>(j, "methods", cfg.methods);
  if (j.contains("align")) {
    const Json& ja = j.at("align");
    check_known_keys(ja, "align",
                     {"beta", "alpha", "learning_rate", "steps", "batch_size", "optimizer"});
    cfg.align.beta = json_get<double>(ja, "beta", cfg.align.beta);
    cfg.align.alpha = json_get<double>(ja, "alpha", cfg.align.alpha);
    cfg.align.learning_rate = json_get<double>(ja, "learning_rate", cfg.align.learning_rate);
    cfg.align.steps = json_get<int>(ja, "steps", cfg.align.steps);
    cfg.align.batch_size = json_get<int>(ja, "batch_size", cfg.align.batch_size);
    const std::string opt = json_get<std::string>(ja, "optimizer", "adam");
    if (opt == "sgd") {
      cfg.align.optimizer = OptimizerKind::sgd;
    } else if (opt == "adam") {
      cfg.align.optimizer = OptimizerKind::adam;
    } else {
      raise(Errc::invalid_config, "unknown optimizer '" + opt + "'");
    }
  }
  if (j.contains("sipo")) {
    const Json& js = j.at("sipo");
    check_known_keys(js, "sipo",
                     {"weight_grid", "filter_grid", "reviewer_weight", "refiner",
                      "refine_max_iters", "implicit_mode", "beta", "temperature",
                      "max_conflicts", "pair_mode", "filter_random", "use_nonconflicting",
                      "template_pair", "realign_learning_rate", "realign_steps"});
    if (js.contains("weight_grid")) cfg.sipo.weight_grid = grid_from_json(js.at("weight_grid"));
    if (js.contains("filter_grid")) cfg.sipo.filter_grid = grid_from_json(js.at("filter_grid"));
    if (js.contains("reviewer_weight") && !js.at("reviewer_weight").empty()) {
      cfg.sipo.reviewer_weight =
          WeightVector::make(js.at("reviewer_weight").get<std::vector<double>>());
    }
    cfg.sipo.refiner = refiner_from_name(
        json_get<std::string>(js, "refiner", refiner_name(cfg.sipo.refiner)));
    cfg.sipo.refine_max_iters = json_get<int>(js, "refine_max_iters", cfg.sipo.refine_max_iters);
    const std::string mode = json_get<std::string>(
        js, "implicit_mode",
        cfg.sipo.implicit_mode == ImplicitRewardMode::dpo_ratio ? "dpo_ratio" : "policy_logprob");
    if (mode == "dpo_ratio") {
      cfg.sipo.implicit_mode = ImplicitRewardMode::dpo_ratio;
    } else if (mode == "policy_logprob") {
      cfg.sipo.implicit_mode = ImplicitRewardMode::policy_logprob;
    } else {
      raise(Errc::invalid_config, "unknown implicit mode '" + mode + "'");
    }
    cfg.sipo.beta = json_get<double>(js, "beta", cfg.sipo.beta);
    cfg.sipo.temperature = json_get<double>(js, "temperature", cfg.sipo.temperature);
    cfg.sipo.max_conflicts = json_get<std::int64_t>(js, "max_conflicts", cfg.sipo.max_conflicts);
    cfg.sipo.pair_mode =
        pair_mode_from_name(json_get<std::string>(js, "pair_mode", pair_mode_name(cfg.sipo.pair_mode)));
    cfg.sipo.filter_random = json_get<bool>(js, "filter_random", cfg.sipo.filter_random);
    cfg.sipo.use_nonconflicting =
        json_get<bool>(js, "use_nonconflicting", cfg.sipo.use_nonconflicting);
    cfg.sipo.template_pair = json_get<std::string>(js, "template_pair", cfg.sipo.template_pair);
    // Re-alignment runs gentler than initial alignment by default.
    cfg.sipo.realign_learning_rate =
        json_get<double>(js, "realign_learning_rate", cfg.sipo.realign_learning_rate);
    cfg.sipo.realign_steps = json_get<int>(js, "realign_steps", cfg.sipo.realign_steps);
  }
  cfg.sipo_rounds = json_get<int>(j, "sipo_rounds", cfg.sipo_rounds);
  cfg.seeds = json_get<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds);
  cfg.out_dir = json_get<std::string>(j, "out_dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["env"] = {{"vocab_size", cfg.env.vocab_size},
              {"response_len", cfg.env.response_len},
              {"prompts", cfg.env.prompts},
              {"seed", cfg.env.seed},
              {"enumeration_budget", cfg.env.enumeration_budget}};
  if (cfg.custom_rewards.empty()) {
    j["rewards"] = cfg.reward_preset;
  } else {
    Json specs = Json::array();
    for (const RewardSpec& spec : cfg.custom_rewards) specs.push_back(reward_spec_to_json(spec));
    j["rewards"] = std::move(specs);
  }
  j["dataset"] = {{"pool_size", cfg.dataset.pool_size},
                  {"subsample_size", cfg.dataset.subsample_size},
                  {"conflict_target", cfg.dataset.conflict_target},
                  {"conflict_ratios", cfg.dataset.conflict_ratios},
                  {"jsonl_path", cfg.dataset.jsonl_path}};
  j["weight_grid"] = grid_to_json(cfg.weight_grid);
  j["methods"] = cfg.methods;
  j["align"] = {{"beta", cfg.align.beta},
                {"alpha", cfg.align.alpha},
                {"learning_rate", cfg.align.learning_rate},
                {"steps", cfg.align.steps},
                {"batch_size", cfg.align.batch_size},
                {"optimizer", cfg.align.optimizer == OptimizerKind::sgd ? "sgd" : "adam"}};
  j["sipo"] = {{"weight_grid", grid_to_json(cfg.sipo.weight_grid)},
               {"filter_grid", grid_to_json(cfg.sipo.filter_grid)},
               {"reviewer_weight", cfg.sipo.reviewer_weight.w},
               {"refiner", refiner_name(cfg.sipo.refiner)},
               {"refine_max_iters", cfg.sipo.refine_max_iters},
               {"implicit_mode", cfg.sipo.implicit_mode == ImplicitRewardMode::dpo_ratio
                                     ? "dpo_ratio"
                                     : "policy_logprob"},
               {"beta", cfg.sipo.beta},
               {"temperature", cfg.sipo.temperature},
               {"max_conflicts", cfg.sipo.max_conflicts},
               {"pair_mode", pair_mode_name(cfg.sipo.pair_mode)},
               {"filter_random", cfg.sipo.filter_random},
               {"use_nonconflicting", cfg.sipo.use_nonconflicting},
               {"template_pair", cfg.sipo.template_pair},
               {"realign_learning_rate", cfg.sipo.realign_learning_rate},
               {"realign_steps", cfg.sipo.realign_steps}};
  j["sipo_rounds"] = cfg.sipo_rounds;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::invalid_config, "cannot read config " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "sipo_minus_refine") return Ablation::sipo_minus_refine;
  if (name == "sipo_minus_filter") return Ablation::sipo_minus_filter;
  if (name == "pref_design_yc_yw") return Ablation::pref_design_yc_yw;
  if (name == "pref_design_chain") return Ablation::pref_design_chain;
  if (name == "pref_design_ywyl") return Ablation::pref_design_ywyl;
  if (name == "sipo_plus_soups") return Ablation::sipo_plus_soups;
  if (name == "second_round") return Ablation::second_round;
  if (name == "nonconflict_sipo") return Ablation::nonconflict_sipo;
  raise(Errc::unknown_ablation, "'" + name + "'");
}

std::string ablation_name(Ablation ablation) {
  switch (ablation) {
    case Ablation::sipo_minus_refine: return "sipo_minus_refine";
    case Ablation::sipo_minus_filter: return "sipo_minus_filter";
    case Ablation::pref_design_yc_yw: return "pref_design_yc_yw";
    case Ablation::pref_design_chain: return "pref_design_chain";
    case Ablation::pref_design_ywyl: return "pref_design_ywyl";
    case Ablation::sipo_plus_soups: return "sipo_plus_soups";
    case Ablation::second_round: return "second_round";
    case Ablation::nonconflict_sipo: return "nonconflict_sipo";
  }
  raise(Errc::unknown_ablation, "unnamed ablation");
}

double median(std::vector<double> values) {
  if (values.empty()) raise(Errc::empty_dataset, "median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

// Systems for every requested method on one dataset, sharing the per-objective
// DPO policies across soups/mod/modpo/sipo.
struct CellSystems {
  std::map<std::string, std::vector<EvalSystem>> by_method;
  std::optional<SipoRoundReport> sipo_report;  // final round
};

AlignConfig align_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  AlignConfig a = cfg.align;
  a.seed = seed;
  return a;
}

CellSystems build_cell(const ExperimentConfig& cfg, std::span<const RewardSpec> specs,
                       const PreferenceDataset& data, std::uint64_t seed,
                       std::span<const std::string> methods) {
  const std::size_t n_obj = specs.size();
  const std::vector<WeightVector> grid = cfg.grid();
  const TabularPolicy ref = TabularPolicy::zeros(cfg.env);
  const AlignConfig align = align_for_seed(cfg, seed);

  CellSystems out;
  std::optional<std::vector<TabularPolicy>> soups;  // lazily trained, shared
  auto need_soups = [&]() -> const std::vector<TabularPolicy>& {
    if (!soups) {
      std::vector<PreferenceDataset> per_objective(n_obj, data);
      soups = soups_align(ref, ref, per_objective, align);
    }
    return *soups;
  };
  std::optional<std::vector<TabularPolicy>> improved;  // shared by sipo and sipo_soups
  auto need_improved = [&]() -> const std::vector<TabularPolicy>& {
    if (!improved) {
      std::vector<TabularPolicy> current = need_soups();
      AlignConfig realign = align;
      realign.learning_rate = cfg.sipo.realign_learning_rate;
      realign.steps = cfg.sipo.realign_steps;
      for (int round = 0; round < cfg.sipo_rounds; ++round) {
        SipoConfig sc = cfg.sipo;
        sc.seed = seed + 7777 + static_cast<std::uint64_t>(round);
        SipoRoundResult res = run_sipo_round(current, ref, data, specs, sc, realign);
        current = std::move(res.policies);
        out.sipo_report = std::move(res.report);
      }
      improved = std::move(current);
    }
    return *improved;
  };

  for (const std::string& method : methods) {
    std::vector<EvalSystem> systems;
    systems.reserve(grid.size());
    if (method == "soups") {
      const auto& policies = need_soups();
      for (const WeightVector& w : grid) systems.emplace_back(merge_params(policies, w));
    } else if (method == "mod") {
      const auto& policies = need_soups();
      for (const WeightVector& w : grid) {
        systems.emplace_back(DecoderEnsemble::make(policies, w));
      }
    } else if (method == "lw") {
      for (const WeightVector& w : grid) {
        auto loss = [&, w](const TabularPolicy& theta, const PreferenceInstance& inst,
                           double scale, std::span<double> grad) {
          return dpo_lw_loss_acc(theta, ref, inst, w, align.beta, scale, grad);
        };
        systems.emplace_back(train(ref, loss, data, align).policy);
      }
    } else if (method == "modpo") {
      const auto& proxies = need_soups();
      for (const WeightVector& w : grid) {
        // Target objective: largest weight, lowest index on ties. Vertices
        // then degenerate to plain single-objective DPO.
        std::size_t k = 0;
        for (std::size_t i = 1; i < w.size(); ++i) {
          if (w[i] > w[k]) k = i;
        }
        auto loss = [&, w, k](const TabularPolicy& theta, const PreferenceInstance& inst,
                              double scale, std::span<double> grad) {
          return modpo_loss_acc(theta, ref, proxies, inst, w, k, align.beta,
                                cfg.sipo.implicit_mode, scale, grad);
        };
        systems.emplace_back(train(ref, loss, data, align).policy);
      }
    } else if (method == "sipo" || method == "sipo_soups") {
      const auto& current = need_improved();
      for (const WeightVector& w : grid) {
        if (method == "sipo") {
          systems.emplace_back(DecoderEnsemble::make(current, w));
        } else {
          systems.emplace_back(merge_params(current, w));
        }
      }
    } else {
      raise(Errc::invalid_config, "unknown method '" + method + "'");
    }
    out.by_method.emplace(method, std::move(systems));
  }
  return out;
}

RewardVector rows_reference(std::span<const FrontRow> rows, std::size_t dims) {
  RewardVector ref(dims, std::numeric_limits<double>::infinity());
  for (const FrontRow& row : rows) {
    for (std::size_t d = 0; d < dims; ++d) ref[d] = std::min(ref[d], row.reward[d]);
  }
  for (double& r : ref) r -= 1e-6;
  return ref;
}

std::vector<FrontRow> evaluate_rows(const std::string& method,
                                    std::span<const EvalSystem> systems,
                                    std::span<const WeightVector> grid,
                                    std::span<const RewardSpec> specs, const EnvSpec& env) {
  std::vector<FrontRow> rows;
  rows.reserve(grid.size());
  for (std::size_t wi = 0; wi < grid.size(); ++wi) {
    ExpectedRewards er = expected_rewards_exact(systems[wi], specs, env);
    rows.push_back(FrontRow{method, static_cast<int>(wi), grid[wi], std::move(er.mean),
                            std::move(er.stderr_)});
  }
  return rows;
}

PreferenceDataset dataset_for_seed(const ExperimentConfig& cfg,
                                   std::span<const RewardSpec> specs, Rng& rng) {
  PreferenceDataset pool;
  if (!cfg.dataset.jsonl_path.empty()) {
    pool = read_jsonl(cfg.dataset.jsonl_path);
  } else {
    pool = generate_dataset(cfg.env, specs, cfg.dataset.pool_size, nullptr, rng);
  }
  if (cfg.dataset.conflict_target >= 0.0) {
    return subsample_with_conflict_ratio(pool, cfg.dataset.conflict_target,
                                         cfg.dataset.subsample_size, rng);
  }
  return pool;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(Errc::io_error, "cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

SweepReport run_conflict_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<RewardSpec> specs = cfg.rewards();
  const std::vector<WeightVector> grid = cfg.grid();
  const std::size_t dims = specs.size();

  SweepReport report;
  for (std::uint64_t seed : cfg.seeds) {
    Rng rng(seed);
    PreferenceDataset pool;
    if (!cfg.dataset.jsonl_path.empty()) {
      pool = read_jsonl(cfg.dataset.jsonl_path);
    } else {
      pool = generate_dataset(cfg.env, specs, cfg.dataset.pool_size, nullptr, rng);
    }
    for (double ratio : cfg.dataset.conflict_ratios) {
      PreferenceDataset sub;
      try {
        sub = subsample_with_conflict_ratio(pool, ratio, cfg.dataset.subsample_size, rng);
      } catch (const Error& e) {
        if (e.code() == Errc::insufficient_pool) {
          raise(Errc::insufficient_pool,
                "ratio " + format_double(ratio) + ": " + e.what());
        }
        throw;
      }
      CellSystems cell = build_cell(cfg, specs, sub, seed, cfg.methods);
      for (const std::string& method : cfg.methods) {
        SweepCell sc;
        sc.method = method;
        sc.ratio = ratio;
        sc.seed = seed;
        sc.rows = evaluate_rows(method, cell.by_method.at(method), grid, specs, cfg.env);
        report.cells.push_back(std::move(sc));
      }
    }
  }

  std::vector<FrontRow> all_rows;
  for (const SweepCell& cell : report.cells) {
    all_rows.insert(all_rows.end(), cell.rows.begin(), cell.rows.end());
  }
  report.reference = rows_reference(all_rows, dims);
  for (SweepCell& cell : report.cells) {
    std::vector<RewardVector> points;
    for (const FrontRow& row : cell.rows) points.push_back(row.reward);
    cell.hypervolume = hypervolume(points, report.reference);
  }

  for (const std::string& method : cfg.methods) {
    for (double ratio : cfg.dataset.conflict_ratios) {
      std::vector<double> hvs;
      RewardVector mean(dims, 0.0);
      std::vector<std::vector<double>> ranges(dims);
      std::int64_t row_count = 0;
      for (const SweepCell& cell : report.cells) {
        if (cell.method != method || cell.ratio != ratio) continue;
        hvs.push_back(cell.hypervolume);
        RewardVector lo(dims, std::numeric_limits<double>::infinity());
        RewardVector hi(dims, -std::numeric_limits<double>::infinity());
        for (const FrontRow& row : cell.rows) {
          for (std::size_t d = 0; d < dims; ++d) {
            mean[d] += row.reward[d];
            lo[d] = std::min(lo[d], row.reward[d]);
            hi[d] = std::max(hi[d], row.reward[d]);
          }
          ++row_count;
        }
        for (std::size_t d = 0; d < dims; ++d) ranges[d].push_back(hi[d] - lo[d]);
      }
      for (double& m : mean) m /= static_cast<double>(row_count);
      report.median_hypervolume[method][ratio] = median(hvs);
      report.mean_rewards[method][ratio] = mean;
      RewardVector steer(dims, 0.0);
      for (std::size_t d = 0; d < dims; ++d) steer[d] = median(ranges[d]);
      report.steerability_range[method][ratio] = steer;
    }
    const RewardVector& at_zero = report.mean_rewards[method].begin()->second;
    for (const auto& [ratio, mean] : report.mean_rewards[method]) {
      RewardVector dec(dims, 0.0);
      for (std::size_t d = 0; d < dims; ++d) dec[d] = at_zero[d] - mean[d];
      report.avg_decrease_vs_zero[method][ratio] = dec;
    }
  }

  // Emit CSVs.
  const std::filesystem::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  {
    CsvWriter csv(out_dir / "sweep_front.csv");
    std::vector<std::string> cols = {"method", "ratio", "seed", "weight_index"};
    for (std::size_t i = 0; i < grid.front().size(); ++i) cols.push_back("w_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("r_" + std::to_string(i + 1));
    csv.header(cols);
    for (const SweepCell& cell : report.cells) {
      for (const FrontRow& row : cell.rows) {
        csv.field(cell.method).field(format_double(cell.ratio))
            .field(static_cast<std::int64_t>(cell.seed)).field(row.weight_index);
        for (double w : row.weight.w) csv.field(w);
        for (double r : row.reward) csv.field(r);
        csv.end_row();
      }
    }
    report.files.push_back(out_dir / "sweep_front.csv");
  }
  {
    CsvWriter csv(out_dir / "sweep_hypervolume.csv");
    std::vector<std::string> cols = {"method", "ratio", "seed", "hypervolume"};
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("ref_" + std::to_string(i + 1));
    csv.header(cols);
    for (const SweepCell& cell : report.cells) {
      csv.field(cell.method).field(format_double(cell.ratio))
          .field(static_cast<std::int64_t>(cell.seed)).field(cell.hypervolume);
      for (double r : report.reference) csv.field(r);
      csv.end_row();
    }
    report.files.push_back(out_dir / "sweep_hypervolume.csv");
  }
  {
    CsvWriter csv(out_dir / "sweep_summary.csv");
    std::vector<std::string> cols = {"method", "ratio", "median_hypervolume"};
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("mean_r_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("decrease_r_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("steer_r_" + std::to_string(i + 1));
    csv.header(cols);
    for (const std::string& method : cfg.methods) {
      for (double ratio : cfg.dataset.conflict_ratios) {
        csv.field(method).field(format_double(ratio))
            .field(report.median_hypervolume[method][ratio]);
        for (double v : report.mean_rewards[method][ratio]) csv.field(v);
        for (double v : report.avg_decrease_vs_zero[method][ratio]) csv.field(v);
        for (double v : report.steerability_range[method][ratio]) csv.field(v);
        csv.end_row();
      }
    }
    report.files.push_back(out_dir / "sweep_summary.csv");
  }
  write_manifest(cfg, report.files, out_dir, "sweep-conflict");
  return report;
}

CompareReport run_baseline_comparison(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::vector<RewardSpec> specs = cfg.rewards();
  const std::vector<WeightVector> grid = cfg.grid();
  const std::size_t dims = specs.size();

  CompareReport report;
  for (std::uint64_t seed : cfg.seeds) {
    Rng rng(seed);
    const PreferenceDataset data = dataset_for_seed(cfg, specs, rng);
    CellSystems cell = build_cell(cfg, specs, data, seed, cfg.methods);
    for (const std::string& method : cfg.methods) {
      CompareCell cc;
      cc.method = method;
      cc.seed = seed;
      cc.rows = evaluate_rows(method, cell.by_method.at(method), grid, specs, cfg.env);
      report.cells.push_back(std::move(cc));
    }
    if (cell.sipo_report) report.sipo_reports.push_back(*std::move(cell.sipo_report));
  }

  std::vector<FrontRow> all_rows;
  for (const CompareCell& cell : report.cells) {
    all_rows.insert(all_rows.end(), cell.rows.begin(), cell.rows.end());
  }
  report.reference = rows_reference(all_rows, dims);
  for (CompareCell& cell : report.cells) {
    std::vector<RewardVector> points;
    for (const FrontRow& row : cell.rows) points.push_back(row.reward);
    cell.hypervolume = hypervolume(points, report.reference);
  }

  for (const std::string& method : cfg.methods) {
    std::vector<double> hvs;
    std::vector<RewardVector> med(grid.size(), RewardVector(dims, 0.0));
    for (std::size_t wi = 0; wi < grid.size(); ++wi) {
      for (std::size_t d = 0; d < dims; ++d) {
        std::vector<double> vals;
        for (const CompareCell& cell : report.cells) {
          if (cell.method == method) vals.push_back(cell.rows[wi].reward[d]);
        }
        med[wi][d] = median(std::move(vals));
      }
    }
    for (const CompareCell& cell : report.cells) {
      if (cell.method == method) hvs.push_back(cell.hypervolume);
    }
    report.median_hypervolume[method] = median(std::move(hvs));
    report.median_rewards[method] = std::move(med);
  }

  for (const std::string& a : cfg.methods) {
    for (const std::string& b : cfg.methods) {
      if (a == b) continue;
      RewardVector delta(dims, 0.0);
      for (std::size_t wi = 0; wi < grid.size(); ++wi) {
        for (std::size_t d = 0; d < dims; ++d) {
          delta[d] += report.median_rewards[a][wi][d] - report.median_rewards[b][wi][d];
        }
      }
      for (double& v : delta) v /= static_cast<double>(grid.size());
      report.avg_improvement[a][b] = std::move(delta);
    }
  }

  const std::filesystem::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  {
    CsvWriter csv(out_dir / "compare_front.csv");
    std::vector<std::string> cols = {"method", "seed", "weight_index"};
    for (std::size_t i = 0; i < grid.front().size(); ++i) cols.push_back("w_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("r_" + std::to_string(i + 1));
    csv.header(cols);
    for (const CompareCell& cell : report.cells) {
      for (const FrontRow& row : cell.rows) {
        csv.field(cell.method).field(static_cast<std::int64_t>(cell.seed)).field(row.weight_index);
        for (double w : row.weight.w) csv.field(w);
        for (double r : row.reward) csv.field(r);
        csv.end_row();
      }
    }
    report.files.push_back(out_dir / "compare_front.csv");
  }
  {
    CsvWriter csv(out_dir / "compare_median_front.csv");
    std::vector<std::string> cols = {"method", "weight_index"};
    for (std::size_t i = 0; i < grid.front().size(); ++i) cols.push_back("w_" + std::to_string(i + 1));
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("median_r_" + std::to_string(i + 1));
    csv.header(cols);
    for (const std::string& method : cfg.methods) {
      for (std::size_t wi = 0; wi < grid.size(); ++wi) {
        csv.field(method).field(static_cast<std::int64_t>(wi));
        for (double w : grid[wi].w) csv.field(w);
        for (double r : report.median_rewards[method][wi]) csv.field(r);
        csv.end_row();
      }
    }
    report.files.push_back(out_dir / "compare_median_front.csv");
  }
  {
    CsvWriter csv(out_dir / "compare_hypervolume.csv");
    std::vector<std::string> cols = {"method", "seed", "hypervolume"};
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("ref_" + std::to_string(i + 1));
    csv.header(cols);
    for (const CompareCell& cell : report.cells) {
      csv.field(cell.method).field(static_cast<std::int64_t>(cell.seed)).field(cell.hypervolume);
      for (double r : report.reference) csv.field(r);
      csv.end_row();
    }
    report.files.push_back(out_dir / "compare_hypervolume.csv");
  }
  {
    CsvWriter csv(out_dir / "compare_summary.csv");
    csv.header({"method", "median_hypervolume"});
    for (const std::string& method : cfg.methods) {
      csv.field(method).field(report.median_hypervolume[method]);
      csv.end_row();
    }
    report.files.push_back(out_dir / "compare_summary.csv");
  }
  {
    CsvWriter csv(out_dir / "compare_avg_improvement.csv");
    std::vector<std::string> cols = {"method_a", "method_b"};
    for (std::size_t i = 0; i < dims; ++i) cols.push_back("delta_r_" + std::to_string(i + 1));
    csv.header(cols);
    for (const auto& [a, inner] : report.avg_improvement) {
      for (const auto& [b, delta] : inner) {
        csv.field(a).field(b);
        for (double v : delta) csv.field(v);
        csv.end_row();
      }
    }
    report.files.push_back(out_dir / "compare_avg_improvement.csv");
  }
  for (std::size_t i = 0; i < report.sipo_reports.size(); ++i) {
    const std::filesystem::path path =
        out_dir / ("sipo_report_seed" + std::to_string(cfg.seeds[i]) + ".json");
    write_round_report_json(report.sipo_reports[i], path);
    report.files.push_back(path);
  }
  write_manifest(cfg, report.files, out_dir, "compare");
  return report;
}

ExperimentConfig ablation_variant_config(const ExperimentConfig& base, Ablation ablation) {
  ExperimentConfig variant = base;
  switch (ablation) {
    case Ablation::sipo_minus_refine:
      variant.sipo.refiner = RefinerKind::noop;
      break;
    case Ablation::sipo_minus_filter:
      variant.sipo.filter_random = true;
      break;
    case Ablation::pref_design_yc_yw:
      variant.sipo.pair_mode = PairMode::yc_vs_yw;
      break;
    case Ablation::pref_design_chain:
      variant.sipo.pair_mode = PairMode::yc_yw_plus_ywyl;
      break;
    case Ablation::pref_design_ywyl:
      variant.sipo.pair_mode = PairMode::ywyl_only;
      break;
    case Ablation::sipo_plus_soups:
      for (std::string& m : variant.methods) {
        if (m == "sipo") m = "sipo_soups";
      }
      break;
    case Ablation::second_round:
      variant.sipo_rounds = 2;
      break;
    case Ablation::nonconflict_sipo:
      variant.sipo.use_nonconflicting = true;
      break;
  }
  return variant;
}

namespace {

void flatten_json(const Json& j, const std::string& prefix, std::map<std::string, Json>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      flatten_json(value, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else {
    out[prefix] = j;
  }
}

}  // namespace

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::map<std::string, Json> fa;
  std::map<std::string, Json> fb;
  flatten_json(config_to_json(a), "", fa);
  flatten_json(config_to_json(b), "", fb);
  std::vector<std::string> changed;
  for (const auto& [key, value] : fa) {
    auto it = fb.find(key);
    if (it == fb.end() || it->second != value) changed.push_back(key);
  }
  for (const auto& [key, value] : fb) {
    if (!fa.count(key)) changed.push_back(key);
  }
  return changed;
}

AblationReport run_ablation(const ExperimentConfig& cfg, Ablation ablation) {
  cfg.validate();
  AblationReport report;
  report.name = ablation_name(ablation);

  ExperimentConfig base = cfg;
  base.out_dir = (std::filesystem::path(cfg.out_dir) / "base").string();
  ExperimentConfig variant = ablation_variant_config(cfg, ablation);
  variant.out_dir = (std::filesystem::path(cfg.out_dir) / report.name).string();

  // The variant must differ from the configured run in exactly the ablation's
  // fields (plus the output directory split above).
  ExperimentConfig audit = ablation_variant_config(cfg, ablation);
  report.changed_fields = config_diff(cfg, audit);

  report.base = run_baseline_comparison(base);
  report.variant = run_baseline_comparison(variant);

  const std::filesystem::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  {
    CsvWriter csv(out_dir / "ablation_summary.csv");
    csv.header({"run", "method", "median_hypervolume"});
    for (const auto& [method, hv] : report.base.median_hypervolume) {
      csv.field("base").field(method).field(hv);
      csv.end_row();
    }
    for (const auto& [method, hv] : report.variant.median_hypervolume) {
      csv.field(report.name).field(method).field(hv);
      csv.end_row();
    }
    report.files.push_back(out_dir / "ablation_summary.csv");
  }
  {
    Json j;
    j["ablation"] = report.name;
    j["changed_fields"] = report.changed_fields;
    std::ofstream out(out_dir / "ablation_diff.json");
    out << j.dump(2) << '\n';
    report.files.push_back(out_dir / "ablation_diff.json");
  }
  write_manifest(cfg, report.files, out_dir, "ablate " + report.name);
  return report;
}

void write_manifest(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& files,
                    const std::filesystem::path& out_dir, const std::string& command) {
  ensure_dir(out_dir);
  Json j;
  j["tool"] = kVersion;
  j["command"] = command;
  j["config"] = config_to_json(cfg);
  j["seeds"] = cfg.seeds;
  Json list = Json::array();
  for (const std::filesystem::path& f : files) {
    list.push_back(std::filesystem::relative(f, out_dir).string());
  }
  j["files"] = list;
  std::ofstream out(out_dir / "manifest.json");
  if (!out) raise(Errc::io_error, "cannot write manifest in " + out_dir.string());
  out << j.dump(2) << '\n';
}

}  // namespace moalab
