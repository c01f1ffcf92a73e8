// moalab command line: dataset generation, conflict statistics, alignment
// training, conflict sweeps, baseline comparisons, self-improvement rounds,
// ablations and checkpoint evaluation. All outputs land under --out-dir with a
// manifest.json describing the resolved config and emitted files.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moalab/align.hpp"
#include "moalab/csvio.hpp"
#include "moalab/experiment.hpp"
#include "moalab/mod_decode.hpp"
#include "moalab/pareto.hpp"
#include "moalab/prefdata.hpp"
#include "moalab/sipo.hpp"

namespace fs = std::filesystem;
using namespace moalab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string method;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config_path, "experiment config JSON");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "override the config seed list with one seed");
  cmd->add_option("--out-dir", opts.out_dir, "override the config output directory");
  cmd->add_option("--method", opts.method, "restrict to a single method");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts.config_path);
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (!opts.method.empty()) cfg.methods = {opts.method};
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(Errc::io_error, "cannot create " + dir.string());
}

void print_stats(const DatasetStats& stats) {
  std::cout << "instances: " << stats.n_instances << "\n"
            << "conflicting: " << stats.n_conflicting << "\n"
            << "conflict_ratio: " << format_double(stats.conflict_ratio) << " ("
            << stats.n_conflicting << "/" << stats.n_instances << ")\n";
  for (std::size_t i = 0; i < stats.label_balance.size(); ++i) {
    std::cout << "label_balance_" << i + 1 << ": " << format_double(stats.label_balance[i])
              << "\n";
  }
}

void write_stats_json(const DatasetStats& stats, const fs::path& path) {
  Json j;
  j["n_instances"] = stats.n_instances;
  j["n_conflicting"] = stats.n_conflicting;
  j["conflict_ratio"] = stats.conflict_ratio;
  j["label_balance"] = stats.label_balance;
  std::ofstream out(path);
  if (!out) raise(Errc::io_error, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_gen_data(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  const auto specs = cfg.rewards();
  Rng rng(cfg.seeds.front());
  PreferenceDataset pool = generate_dataset(cfg.env, specs, cfg.dataset.pool_size, nullptr, rng);
  if (cfg.dataset.conflict_target >= 0.0) {
    pool = subsample_with_conflict_ratio(pool, cfg.dataset.conflict_target,
                                         cfg.dataset.subsample_size, rng);
  }
  const fs::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  write_jsonl(pool, out_dir / "dataset.jsonl");
  const DatasetStats stats = conflict_ratio(pool);
  write_stats_json(stats, out_dir / "stats.json");
  print_stats(stats);
  write_manifest(cfg, {out_dir / "dataset.jsonl", out_dir / "stats.json"}, out_dir, "gen-data");
  return kExitOk;
}

int cmd_stats(const std::string& input, const std::string& out_dir) {
  const PreferenceDataset dataset = read_jsonl(input);
  const DatasetStats stats = conflict_ratio(dataset);
  print_stats(stats);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_stats_json(stats, fs::path(out_dir) / "stats.json");
  }
  return kExitOk;
}

int cmd_train(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  const auto specs = cfg.rewards();
  const auto grid = cfg.grid();
  const std::uint64_t seed = cfg.seeds.front();
  Rng rng(seed);
  PreferenceDataset data;
  if (!cfg.dataset.jsonl_path.empty()) {
    data = read_jsonl(cfg.dataset.jsonl_path);
  } else {
    data = generate_dataset(cfg.env, specs, cfg.dataset.pool_size, nullptr, rng);
  }
  if (cfg.dataset.conflict_target >= 0.0) {
    data = subsample_with_conflict_ratio(data, cfg.dataset.conflict_target,
                                         cfg.dataset.subsample_size, rng);
  }

  const fs::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  std::vector<fs::path> files;
  const TabularPolicy ref = TabularPolicy::zeros(cfg.env);
  AlignConfig align = cfg.align;
  align.seed = seed;

  for (const std::string& method : cfg.methods) {
    if (method == "soups" || method == "mod" || method == "sipo" || method == "sipo_soups") {
      std::vector<PreferenceDataset> per_obj(specs.size(), data);
      std::vector<TabularPolicy> policies;
      for (std::size_t i = 0; i < specs.size(); ++i) {
        const int objective = static_cast<int>(i);
        auto loss = [&, objective](const TabularPolicy& theta, const PreferenceInstance& inst,
                                   double scale, std::span<double> grad) {
          return dpo_loss_acc(theta, ref, inst, objective, align.beta, scale, grad);
        };
        TrainResult res = train(ref, loss, per_obj[i], align);
        const fs::path ckpt = out_dir / ("policy_obj" + std::to_string(i) + ".json");
        const fs::path trace = out_dir / ("loss_obj" + std::to_string(i) + ".csv");
        save_checkpoint(res.policy, ckpt);
        write_loss_trace_csv(res.loss_trace, trace);
        files.push_back(ckpt);
        files.push_back(trace);
        policies.push_back(std::move(res.policy));
      }
      break;  // one per-objective family serves every policy-ensemble method
    }
    if (method == "lw" || method == "modpo") {
      std::vector<TabularPolicy> proxies;
      if (method == "modpo") {
        std::vector<PreferenceDataset> per_obj(specs.size(), data);
        proxies = soups_align(ref, ref, per_obj, align);
      }
      for (std::size_t wi = 0; wi < grid.size(); ++wi) {
        const WeightVector w = grid[wi];
        InstanceLossFn loss;
        if (method == "lw") {
          loss = [&, w](const TabularPolicy& theta, const PreferenceInstance& inst, double scale,
                        std::span<double> grad) {
            return dpo_lw_loss_acc(theta, ref, inst, w, align.beta, scale, grad);
          };
        } else {
          std::size_t k = 0;
          for (std::size_t i = 1; i < w.size(); ++i) {
            if (w[i] > w[k]) k = i;
          }
          loss = [&, w, k](const TabularPolicy& theta, const PreferenceInstance& inst,
                           double scale, std::span<double> grad) {
            return modpo_loss_acc(theta, ref, proxies, inst, w, k, align.beta,
                                  cfg.sipo.implicit_mode, scale, grad);
          };
        }
        TrainResult res = train(ref, loss, data, align);
        const fs::path ckpt =
            out_dir / (method + "_policy_w" + std::to_string(wi) + ".json");
        const fs::path trace = out_dir / (method + "_loss_w" + std::to_string(wi) + ".csv");
        save_checkpoint(res.policy, ckpt);
        write_loss_trace_csv(res.loss_trace, trace);
        files.push_back(ckpt);
        files.push_back(trace);
      }
    }
  }
  write_manifest(cfg, files, out_dir, "train");
  return kExitOk;
}

int cmd_sweep(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  if (opts.method.empty() && cfg.methods.size() > 1) {
    cfg.methods = {"soups"};  // sweep default; pass --method to pick another
  }
  SweepReport report = run_conflict_sweep(cfg);
  for (const auto& [method, by_ratio] : report.median_hypervolume) {
    for (const auto& [ratio, hv] : by_ratio) {
      std::cout << method << " ratio " << format_double(ratio) << ": median hypervolume "
                << format_double(hv) << "\n";
    }
  }
  return kExitOk;
}

int cmd_compare(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  CompareReport report = run_baseline_comparison(cfg);
  for (const auto& [method, hv] : report.median_hypervolume) {
    std::cout << method << ": median hypervolume " << format_double(hv) << "\n";
  }
  return kExitOk;
}

int cmd_sipo(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  const auto specs = cfg.rewards();
  const auto grid = cfg.grid();
  const fs::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  std::vector<fs::path> files;

  for (std::uint64_t seed : cfg.seeds) {
    Rng rng(seed);
    PreferenceDataset data;
    if (!cfg.dataset.jsonl_path.empty()) {
      data = read_jsonl(cfg.dataset.jsonl_path);
    } else {
      data = generate_dataset(cfg.env, specs, cfg.dataset.pool_size, nullptr, rng);
    }
    if (cfg.dataset.conflict_target >= 0.0) {
      data = subsample_with_conflict_ratio(data, cfg.dataset.conflict_target,
                                           cfg.dataset.subsample_size, rng);
    }
    const TabularPolicy ref = TabularPolicy::zeros(cfg.env);
    AlignConfig align = cfg.align;
    align.seed = seed;
    std::vector<PreferenceDataset> per_obj(specs.size(), data);
    std::vector<TabularPolicy> policies = soups_align(ref, ref, per_obj, align);

    AlignConfig realign = align;
    realign.learning_rate = cfg.sipo.realign_learning_rate;
    realign.steps = cfg.sipo.realign_steps;
    for (int round = 0; round < cfg.sipo_rounds; ++round) {
      SipoConfig sc = cfg.sipo;
      sc.seed = seed + 7777 + static_cast<std::uint64_t>(round);
      SipoRoundResult res = run_sipo_round(policies, ref, data, specs, sc, realign);
      policies = std::move(res.policies);
      const std::string tag =
          "seed" + std::to_string(seed) + "_round" + std::to_string(round + 1);
      const fs::path report_path = out_dir / ("sipo_report_" + tag + ".json");
      write_round_report_json(res.report, report_path);
      files.push_back(report_path);
      const fs::path dc_path = out_dir / ("improvement_set_" + tag + ".jsonl");
      write_jsonl(res.improvement_set, dc_path);
      files.push_back(dc_path);
      for (const std::string& warning : res.report.warnings) {
        std::cerr << "warning (" << tag << "): " << warning << "\n";
      }
    }
    for (std::size_t i = 0; i < policies.size(); ++i) {
      const fs::path ckpt =
          out_dir / ("sipo_policy_seed" + std::to_string(seed) + "_obj" + std::to_string(i) +
                     ".json");
      save_checkpoint(policies[i], ckpt);
      files.push_back(ckpt);
    }

    std::vector<MethodSystems> methods;
    MethodSystems mod_eval{"sipo", {}};
    MethodSystems soup_eval{"sipo_soups", {}};
    for (const WeightVector& w : grid) {
      mod_eval.systems.emplace_back(DecoderEnsemble::make(policies, w));
      soup_eval.systems.emplace_back(merge_params(policies, w));
    }
    methods.push_back(std::move(mod_eval));
    methods.push_back(std::move(soup_eval));
    FrontTable table = front_table(methods, grid, specs, cfg.env);
    const fs::path front_path =
        out_dir / ("sipo_front_seed" + std::to_string(seed) + ".csv");
    const fs::path hv_path =
        out_dir / ("sipo_hypervolume_seed" + std::to_string(seed) + ".csv");
    write_front_csv(table, front_path);
    write_hypervolume_csv(table, hv_path);
    files.push_back(front_path);
    files.push_back(hv_path);
    for (const auto& [method, hv] : table.hypervolume_by_method) {
      std::cout << "seed " << seed << " " << method << ": hypervolume " << format_double(hv)
                << "\n";
    }
  }
  write_manifest(cfg, files, out_dir, "sipo");
  return kExitOk;
}

int cmd_ablate(const CommonOpts& opts, const std::string& ablation_str) {
  ExperimentConfig cfg = resolve_config(opts);
  const Ablation ablation = ablation_from_name(ablation_str);
  AblationReport report = run_ablation(cfg, ablation);
  std::cout << "ablation " << report.name << " changed fields:";
  for (const std::string& f : report.changed_fields) std::cout << ' ' << f;
  std::cout << "\n";
  for (const auto& [method, hv] : report.base.median_hypervolume) {
    std::cout << "base " << method << ": " << format_double(hv) << "\n";
  }
  for (const auto& [method, hv] : report.variant.median_hypervolume) {
    std::cout << report.name << " " << method << ": " << format_double(hv) << "\n";
  }
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoints_dir) {
  ExperimentConfig cfg = resolve_config(opts);
  const auto specs = cfg.rewards();
  const auto grid = cfg.grid();

  std::vector<TabularPolicy> policies;
  for (std::size_t i = 0;; ++i) {
    const fs::path ckpt = fs::path(checkpoints_dir) / ("policy_obj" + std::to_string(i) + ".json");
    if (!fs::exists(ckpt)) break;
    policies.push_back(load_checkpoint(ckpt));
  }
  if (policies.empty()) {
    raise(Errc::invalid_config, "no policy_obj<i>.json checkpoints in " + checkpoints_dir);
  }
  std::vector<MethodSystems> methods;
  MethodSystems merged{"soups", {}};
  MethodSystems decoded{"mod", {}};
  for (const WeightVector& w : grid) {
    merged.systems.emplace_back(merge_params(policies, w));
    decoded.systems.emplace_back(DecoderEnsemble::make(policies, w));
  }
  methods.push_back(std::move(merged));
  methods.push_back(std::move(decoded));
  FrontTable table = front_table(methods, grid, specs, cfg.env);

  const fs::path out_dir = cfg.out_dir;
  ensure_dir(out_dir);
  write_front_csv(table, out_dir / "eval_front.csv");
  write_hypervolume_csv(table, out_dir / "eval_hypervolume.csv");
  write_manifest(cfg, {out_dir / "eval_front.csv", out_dir / "eval_hypervolume.csv"}, out_dir,
                 "eval");
  for (const auto& [method, hv] : table.hypervolume_by_method) {
    std::cout << method << ": hypervolume " << format_double(hv) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moalab: multi-objective preference alignment laboratory"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic preference dataset");
  add_common(gen, gen_opts);

  std::string stats_input;
  std::string stats_out;
  auto* stats = app.add_subcommand("stats", "conflict statistics for a JSONL dataset");
  stats->add_option("--input", stats_input, "JSONL dataset path")->required();
  stats->add_option("--out-dir", stats_out, "optional directory for stats.json");

  CommonOpts train_opts;
  auto* train_cmd = app.add_subcommand("train", "train the configured methods");
  add_common(train_cmd, train_opts);

  CommonOpts sweep_opts;
  auto* sweep = app.add_subcommand("sweep-conflict", "conflict-ratio sweep");
  add_common(sweep, sweep_opts);

  CommonOpts compare_opts;
  auto* compare = app.add_subcommand("compare", "baseline comparison on one dataset");
  add_common(compare, compare_opts);

  CommonOpts sipo_opts;
  auto* sipo = app.add_subcommand("sipo", "self-improvement rounds on conflicting data");
  add_common(sipo, sipo_opts);

  CommonOpts ablate_opts;
  std::string ablation_name_str;
  auto* ablate = app.add_subcommand("ablate", "run a named ablation against the base config");
  add_common(ablate, ablate_opts);
  ablate->add_option("--ablation", ablation_name_str, "ablation name")->required();

  CommonOpts eval_opts;
  std::string checkpoints_dir;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate saved checkpoints over the weight grid");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoints", checkpoints_dir, "directory with policy_obj<i>.json")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (stats->parsed()) return cmd_stats(stats_input, stats_out);
    if (train_cmd->parsed()) return cmd_train(train_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts);
    if (compare->parsed()) return cmd_compare(compare_opts);
    if (sipo->parsed()) return cmd_sipo(sipo_opts);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ablation_name_str);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, checkpoints_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kExitConfigError : kExitRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}
