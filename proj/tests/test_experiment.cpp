#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "moalab/csvio.hpp"
#include "moalab/experiment.hpp"
#include "test_support.hpp"

using namespace moalab;
using moalab::testing::TempDir;

namespace {

ExperimentConfig tiny_config(const std::filesystem::path& out_dir) {
  ExperimentConfig cfg;
  cfg.env.vocab_size = 8;
  cfg.env.response_len = 4;
  cfg.env.prompts = {0};
  cfg.dataset.pool_size = 400;
  cfg.dataset.subsample_size = 40;
  cfg.dataset.conflict_ratios = {0.0, 0.9};
  cfg.dataset.conflict_target = 0.6;
  cfg.align.steps = 60;
  cfg.sipo.realign_steps = 40;
  cfg.seeds = {1, 2};
  cfg.methods = {"soups"};
  cfg.out_dir = out_dir.string();
  return cfg;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("config JSON round-trips") {
  TempDir dir("cfg");
  ExperimentConfig cfg = tiny_config(dir.path());
  cfg.weight_grid = two_objective_grid(4);
  cfg.sipo.reviewer_weight = WeightVector::make({0.0, 1.0});
  const Json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
}

TEST_CASE("configs accept explicit reward spec declarations") {
  TempDir dir("cfg_rewards");
  Json j = config_to_json(tiny_config(dir.path()));
  j["rewards"] = Json::array({
      Json{{"name", "twos"}, {"kind", "token_count_positive"}, {"token_set", {2}}},
      Json{{"name", "match"}, {"kind", "target_match"}, {"target", {1, 1, 1, 1}}},
  });
  const ExperimentConfig cfg = config_from_json(j);
  const auto specs = cfg.rewards();
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].name == "twos");
  CHECK(eval_reward(specs[0], 0, {2, 2, 0, 1}) == 2.0);
  CHECK(eval_reward(specs[1], 0, {1, 1, 0, 1}) == 3.0);
  CHECK(config_to_json(config_from_json(config_to_json(cfg))) == config_to_json(cfg));
}

TEST_CASE("config validation failures are config errors") {
  TempDir dir("cfg_bad");
  ExperimentConfig cfg = tiny_config(dir.path());
  cfg.methods = {"unknown_method"};
  try {
    cfg.validate();
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(is_config_error(e.code()));
  }

  Json j = config_to_json(tiny_config(dir.path()));
  j["align"]["optimizer"] = "newton";
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("InvalidConfig"), Error);

  Json typo = config_to_json(tiny_config(dir.path()));
  typo["align"]["learning_rte"] = 0.1;
  CHECK_THROWS_WITH_AS(config_from_json(typo), doctest::Contains("learning_rte"), Error);
}

TEST_CASE("ablation names resolve and unknown names are rejected") {
  CHECK(ablation_from_name("second_round") == Ablation::second_round);
  CHECK(ablation_name(Ablation::sipo_minus_filter) == "sipo_minus_filter");
  CHECK_THROWS_WITH_AS(ablation_from_name("drop_everything"),
                       doctest::Contains("UnknownAblation"), Error);
}

TEST_CASE("ablation variants differ from base in exactly the named fields") {
  TempDir dir("cfg_abl");
  const ExperimentConfig base = tiny_config(dir.path());
  const auto expect = std::map<Ablation, std::vector<std::string>>{
      {Ablation::sipo_minus_refine, {"sipo.refiner"}},
      {Ablation::sipo_minus_filter, {"sipo.filter_random"}},
      {Ablation::pref_design_yc_yw, {"sipo.pair_mode"}},
      {Ablation::pref_design_chain, {"sipo.pair_mode"}},
      {Ablation::pref_design_ywyl, {"sipo.pair_mode"}},
      {Ablation::second_round, {"sipo_rounds"}},
      {Ablation::nonconflict_sipo, {"sipo.use_nonconflicting"}},
  };
  for (const auto& [ablation, fields] : expect) {
    CHECK(config_diff(base, ablation_variant_config(base, ablation)) == fields);
  }

  ExperimentConfig with_sipo = base;
  with_sipo.methods = {"soups", "sipo"};
  const auto changed = config_diff(with_sipo, ablation_variant_config(with_sipo,
                                                                      Ablation::sipo_plus_soups));
  CHECK(changed == std::vector<std::string>{"methods"});
}

TEST_CASE("median is the usual order statistic") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS_AS(median({}), Error);
}

TEST_CASE("conflict sweep emits cells, summaries and byte-identical reruns") {
  TempDir dir_a("sweep_a");
  TempDir dir_b("sweep_b");
  ExperimentConfig cfg = tiny_config(dir_a.path() / "run");
  cfg.dataset.conflict_target = -1.0;

  const SweepReport report = run_conflict_sweep(cfg);
  CHECK(report.cells.size() == 4);  // 2 ratios x 2 seeds, one method
  CHECK(report.median_hypervolume.at("soups").size() == 2);
  CHECK(report.mean_rewards.at("soups").at(0.0).size() == 2);
  CHECK(report.avg_decrease_vs_zero.at("soups").at(0.0) == RewardVector{0.0, 0.0});
  for (const SweepCell& cell : report.cells) {
    CHECK(cell.rows.size() == 6);
    CHECK(cell.hypervolume >= 0.0);
  }
  for (const char* name : {"sweep_front.csv", "sweep_hypervolume.csv", "sweep_summary.csv",
                           "manifest.json"}) {
    CHECK(std::filesystem::exists(dir_a.path() / "run" / name));
  }

  ExperimentConfig cfg_b = cfg;
  cfg_b.out_dir = (dir_b.path() / "run").string();
  run_conflict_sweep(cfg_b);
  for (const char* name : {"sweep_front.csv", "sweep_hypervolume.csv", "sweep_summary.csv"}) {
    CHECK(slurp(dir_a.path() / "run" / name) == slurp(dir_b.path() / "run" / name));
  }
}

TEST_CASE("baseline comparison aligns methods at vertex weights") {
  TempDir dir("cmp");
  ExperimentConfig cfg = tiny_config(dir.path() / "run");
  cfg.methods = {"soups", "lw", "modpo", "mod"};
  cfg.seeds = {1};
  const CompareReport report = run_baseline_comparison(cfg);
  REQUIRE(report.cells.size() == 4);

  // all DPO aggregations degenerate to the same single-objective policy at the
  // simplex vertices, and the decoder ensemble agrees within evaluation noise
  const auto& grid = cfg.grid();
  for (std::size_t wi : {std::size_t{0}, grid.size() - 1}) {
    const RewardVector& soups = report.cells[0].rows[wi].reward;
    for (std::size_t c = 1; c < report.cells.size(); ++c) {
      const RewardVector& other = report.cells[c].rows[wi].reward;
      for (std::size_t d = 0; d < soups.size(); ++d) {
        CHECK(other[d] == doctest::Approx(soups[d]).epsilon(1e-9));
      }
    }
  }

  for (const char* name :
       {"compare_front.csv", "compare_median_front.csv", "compare_hypervolume.csv",
        "compare_summary.csv", "compare_avg_improvement.csv", "manifest.json"}) {
    CHECK(std::filesystem::exists(dir.path() / "run" / name));
  }
}

TEST_CASE("average improvement columns recompute from the emitted medians") {
  TempDir dir("cmp_imp");
  ExperimentConfig cfg = tiny_config(dir.path() / "run");
  cfg.methods = {"soups", "lw"};
  cfg.seeds = {1, 2, 3};
  const CompareReport report = run_baseline_comparison(cfg);

  const auto& grid = cfg.grid();
  RewardVector recomputed(2, 0.0);
  for (std::size_t wi = 0; wi < grid.size(); ++wi) {
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<double> soups_vals;
      std::vector<double> lw_vals;
      for (const CompareCell& cell : report.cells) {
        (cell.method == "soups" ? soups_vals : lw_vals).push_back(cell.rows[wi].reward[d]);
      }
      recomputed[d] += median(soups_vals) - median(lw_vals);
    }
  }
  for (double& v : recomputed) v /= static_cast<double>(grid.size());
  const RewardVector& reported = report.avg_improvement.at("soups").at("lw");
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(reported[d] == doctest::Approx(recomputed[d]).epsilon(1e-12));
  }
}

TEST_CASE("sipo method produces reports inside the comparison") {
  TempDir dir("cmp_sipo");
  ExperimentConfig cfg = tiny_config(dir.path() / "run");
  cfg.methods = {"sipo"};
  cfg.seeds = {1};
  cfg.align.steps = 120;
  const CompareReport report = run_baseline_comparison(cfg);
  REQUIRE(report.sipo_reports.size() == 1);
  CHECK(report.sipo_reports[0].instances_considered > 0);
  CHECK(std::filesystem::exists(dir.path() / "run" / "sipo_report_seed1.json"));
}

TEST_CASE("stats line formatting via the CLI binary") {
  TempDir dir("cli_stats");
  const auto jsonl = dir.path() / "mixed.jsonl";
  {
    std::ofstream out(jsonl);
    for (int i = 0; i < 10; ++i) {
      out << R"({"prompt": 0, "y_a": [0,1], "y_b": [1,0], "p": )"
          << (i < 4 ? "[1,-1]" : "[1,1]") << "}\n";
    }
  }
  const std::string cmd = std::string(MOALAB_CLI_PATH) + " stats --input " + jsonl.string() +
                          " > " + (dir.path() / "out.txt").string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  const std::string out = slurp(dir.path() / "out.txt");
  CHECK(out.find("conflict_ratio: 0.4 (4/10)") != std::string::npos);
}

TEST_CASE("CLI exit codes distinguish config errors") {
  TempDir dir("cli_exit");
  const auto bad_config = dir.path() / "bad.json";
  {
    std::ofstream out(bad_config);
    out << R"({"methods": ["nonsense"]})" << "\n";
  }
  const std::string cmd = std::string(MOALAB_CLI_PATH) + " compare --config " +
                          bad_config.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 2);

  const std::string missing = std::string(MOALAB_CLI_PATH) + " stats --input " +
                              (dir.path() / "nope.jsonl").string() + " 2>/dev/null";
  const int status2 = std::system(missing.c_str());
  REQUIRE(WIFEXITED(status2));
  CHECK(WEXITSTATUS(status2) == 3);
}

TEST_CASE("gen-data CLI writes dataset, stats and manifest") {
  TempDir dir("cli_gen");
  ExperimentConfig cfg = tiny_config(dir.path() / "run");
  cfg.dataset.pool_size = 50;
  cfg.dataset.conflict_target = -1.0;
  const auto config_path = dir.path() / "config.json";
  {
    std::ofstream out(config_path);
    out << config_to_json(cfg).dump(2) << "\n";
  }
  const std::string cmd = std::string(MOALAB_CLI_PATH) + " gen-data --config " +
                          config_path.string() + " > /dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(std::filesystem::exists(dir.path() / "run" / "dataset.jsonl"));
  CHECK(std::filesystem::exists(dir.path() / "run" / "stats.json"));
  CHECK(std::filesystem::exists(dir.path() / "run" / "manifest.json"));
  const PreferenceDataset back = read_jsonl(dir.path() / "run" / "dataset.jsonl");
  CHECK(back.size() == 50);
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(0.5383) == "0.5383");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-0.25) == "-0.25");
  const double tricky = 0.1 + 0.2;
  CHECK(std::strtod(format_double(tricky).c_str(), nullptr) == tricky);
}
