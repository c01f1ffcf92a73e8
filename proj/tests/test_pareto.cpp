#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "moalab/pareto.hpp"
#include "moalab/rewards.hpp"
#include "test_support.hpp"

using namespace moalab;
using moalab::testing::TempDir;

namespace {

EnvSpec toy_env() {
  EnvSpec env;
  env.vocab_size = 8;
  env.response_len = 4;
  env.prompts = {0};
  return env;
}

// Independent O(n^2) oracle: a point stays iff no other point weakly exceeds
// it everywhere with one strict improvement.
std::vector<std::size_t> brute_force_front(const std::vector<RewardVector>& pts) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      bool ge_all = true;
      bool gt_any = false;
      for (std::size_t d = 0; d < pts[i].size(); ++d) {
        if (pts[j][d] < pts[i][d]) ge_all = false;
        if (pts[j][d] > pts[i][d]) gt_any = true;
      }
      if (ge_all && gt_any) {
        dominated = true;
        break;
      }
    }
    if (!dominated) keep.push_back(i);
  }
  return keep;
}

// Rectangle-union area by coordinate compression; independent of the sweep.
double rectangle_union_area(const std::vector<RewardVector>& pts, const RewardVector& ref) {
  std::vector<double> xs = {ref[0]};
  std::vector<double> ys = {ref[1]};
  for (const auto& p : pts) {
    xs.push_back(p[0]);
    ys.push_back(p[1]);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      const double cx = 0.5 * (xs[i] + xs[i + 1]);
      const double cy = 0.5 * (ys[j] + ys[j + 1]);
      for (const auto& p : pts) {
        if (p[0] >= cx && p[1] >= cy) {
          area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
          break;
        }
      }
    }
  }
  return area;
}

TabularPolicy near_deterministic(const EnvSpec& env, const Response& path) {
  TabularPolicy p = TabularPolicy::zeros(env);
  for (int t = 0; t < env.response_len; ++t) {
    Response prefix(path.begin(), path.begin() + t);
    const std::int64_t s = state_index(env, prefix);
    p.logits_row(0, s)[static_cast<std::size_t>(path[static_cast<std::size_t>(t)])] = 40.0;
  }
  return p;
}

}  // namespace

TEST_CASE("expected rewards of the uniform policy, exact mode") {
  const EnvSpec env = toy_env();
  const auto specs = reward_preset("toy-2obj", env);
  const EvalSystem system = TabularPolicy::zeros(env);
  const ExpectedRewards er = expected_rewards_exact(system, specs, env);
  CHECK(er.mean[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(er.mean[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("expected rewards of a near-deterministic policy") {
  const EnvSpec env = toy_env();
  const auto specs = reward_preset("toy-2obj", env);
  const EvalSystem system = near_deterministic(env, {0, 1, 2, 0});
  const ExpectedRewards er = expected_rewards_exact(system, specs, env);
  CHECK(er.mean[0] == doctest::Approx(4.0).epsilon(1e-8));
  CHECK(er.mean[1] == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("expected rewards are invariant to prompt evaluation order") {
  EnvSpec env = toy_env();
  env.prompts = {3, 1, 2};
  EnvSpec reordered = env;
  reordered.prompts = {2, 3, 1};
  const auto specs = reward_preset("toy-2obj", env);
  Rng rng(11);
  TabularPolicy p = TabularPolicy::random_init(env, 1.0, rng);
  const ExpectedRewards a = expected_rewards_exact(p, specs, env);
  // same policy content evaluated under a permuted prompt list
  TabularPolicy q = TabularPolicy::zeros(reordered);
  for (int pi = 0; pi < 3; ++pi) {
    const int src = [&] {
      for (int i = 0; i < 3; ++i) {
        if (env.prompts[static_cast<std::size_t>(i)] ==
            reordered.prompts[static_cast<std::size_t>(pi)]) {
          return i;
        }
      }
      return -1;
    }();
    for (std::int64_t s = 0; s < p.states_per_prompt(); ++s) {
      auto src_row = p.logits_row(src, s);
      auto dst_row = q.logits_row(pi, s);
      std::copy(src_row.begin(), src_row.end(), dst_row.begin());
    }
  }
  const ExpectedRewards b = expected_rewards_exact(q, specs, reordered);
  CHECK(a.mean[0] == doctest::Approx(b.mean[0]).epsilon(1e-12));
  CHECK(a.mean[1] == doctest::Approx(b.mean[1]).epsilon(1e-12));
}

TEST_CASE("exact evaluation refuses non-enumerable spaces") {
  EnvSpec big;
  big.vocab_size = 10;
  big.response_len = 8;
  big.prompts = {0};
  const auto specs = reward_preset("toy-2obj", big);
  const EvalSystem tiny = TabularPolicy::zeros(toy_env());
  CHECK_THROWS_WITH_AS(expected_rewards_exact(tiny, specs, big),
                       doctest::Contains("EnumerationTooLarge"), Error);
}

TEST_CASE("monte carlo expected rewards agree with exact within four standard errors") {
  const EnvSpec env = toy_env();
  const auto specs = reward_preset("toy-2obj", env);
  Rng init(13);
  const EvalSystem system = TabularPolicy::random_init(env, 1.0, init);
  const ExpectedRewards exact = expected_rewards_exact(system, specs, env);
  Rng rng(17);
  const ExpectedRewards mc = expected_rewards_monte_carlo(system, specs, env, 100'000, rng);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(std::abs(mc.mean[i] - exact.mean[i]) < 4.0 * mc.stderr_[i]);
  }
}

TEST_CASE("pareto_front keeps exactly the non-dominated points") {
  const std::vector<RewardVector> pts = {{1, 1}, {2, 0}, {0, 2}, {0.5, 0.5}};
  const auto front = pareto_front(pts);
  CHECK(front == std::vector<RewardVector>{{1, 1}, {2, 0}, {0, 2}});

  const std::vector<RewardVector> single = {{3, 4}};
  CHECK(pareto_front(single) == single);
}

TEST_CASE("pareto_front matches the quadratic oracle on random sets") {
  Rng rng(19);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t dims = 2 + rng.uniform_below(2);
    std::vector<RewardVector> pts(200, RewardVector(dims));
    for (auto& p : pts) {
      for (double& v : p) v = std::floor(rng.uniform() * 8.0);  // ties on purpose
    }
    CHECK(pareto_front_indices(pts) == brute_force_front(pts));
  }
}

TEST_CASE("hypervolume on small exact cases") {
  CHECK(hypervolume(std::vector<RewardVector>{{2, 1}, {1, 2}}, {0, 0}) == 3.0);
  CHECK(hypervolume(std::vector<RewardVector>{{1, 1}}, {0, 0}) == 1.0);
  CHECK(hypervolume(std::vector<RewardVector>{}, {0, 0}) == 0.0);
  CHECK_THROWS_WITH_AS(hypervolume(std::vector<RewardVector>{{-1, 1}}, {0, 0}),
                       doctest::Contains("ReferenceViolation"), Error);
}

TEST_CASE("2-D hypervolume equals the rectangle-union oracle exactly on dyadic inputs") {
  Rng rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<RewardVector> pts(1 + rng.uniform_below(8), RewardVector(2));
    for (auto& p : pts) {
      p[0] = static_cast<double>(rng.uniform_below(257)) / 64.0;
      p[1] = static_cast<double>(rng.uniform_below(257)) / 64.0;
    }
    const RewardVector ref = {0.0, 0.0};
    CHECK(hypervolume(pts, ref) == rectangle_union_area(pts, ref));
  }
}

TEST_CASE("3-D hypervolume with a constant third axis reduces to a 2-D prism") {
  std::vector<RewardVector> pts = {{2, 1, 3}, {1, 2, 3}};
  std::vector<RewardVector> flat = {{2, 1}, {1, 2}};
  CHECK(hypervolume(pts, {0, 0, 0}) ==
        doctest::Approx(3.0 * hypervolume(flat, {0, 0})).epsilon(1e-12));
}

TEST_CASE("hypervolume is monotone under adding points") {
  Rng rng(29);
  for (std::size_t dims : {std::size_t{2}, std::size_t{3}}) {
    std::vector<RewardVector> pts;
    const RewardVector ref(dims, 0.0);
    double prev = 0.0;
    for (int k = 0; k < 12; ++k) {
      RewardVector p(dims);
      for (double& v : p) v = rng.uniform() * 4.0;
      pts.push_back(p);
      const double hv = hypervolume(pts, ref);
      CHECK(hv >= prev - 1e-12);
      prev = hv;
    }
  }
}

TEST_CASE("front_table emits one row per method and weight with a shared reference") {
  const EnvSpec env = toy_env();
  const auto specs = reward_preset("toy-2obj", env);
  const auto grid = two_objective_grid(6);
  Rng rng(31);
  const TabularPolicy a = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy b = TabularPolicy::random_init(env, 1.0, rng);
  std::vector<TabularPolicy> policies = {a, b};

  MethodSystems merged{"soups", {}};
  for (const WeightVector& w : grid) merged.systems.emplace_back(merge_params(policies, w));
  std::vector<MethodSystems> methods = {merged};
  const FrontTable table = front_table(methods, grid, specs, env);
  CHECK(table.rows.size() == 6);
  CHECK(table.hypervolume_by_method.count("soups") == 1);

  // vertex rows coincide with the underlying per-objective policies
  const ExpectedRewards obj0 = expected_rewards_exact(EvalSystem{a}, specs, env);
  CHECK(table.rows[5].weight[0] == 1.0);  // grid point (1, 0)
  CHECK(table.rows[5].reward[0] == doctest::Approx(obj0.mean[0]).epsilon(1e-12));
  CHECK(table.rows[5].reward[1] == doctest::Approx(obj0.mean[1]).epsilon(1e-12));
}

TEST_CASE("front CSV values round-trip exactly") {
  const EnvSpec env = toy_env();
  const auto specs = reward_preset("toy-2obj", env);
  const auto grid = two_objective_grid(3);
  Rng rng(37);
  std::vector<TabularPolicy> policies = {TabularPolicy::random_init(env, 1.0, rng),
                                         TabularPolicy::random_init(env, 1.0, rng)};
  MethodSystems merged{"soups", {}};
  for (const WeightVector& w : grid) merged.systems.emplace_back(merge_params(policies, w));
  std::vector<MethodSystems> methods = {merged};
  const FrontTable table = front_table(methods, grid, specs, env);

  TempDir dir("front_csv");
  write_front_csv(table, dir.path() / "front.csv");
  write_hypervolume_csv(table, dir.path() / "hv.csv");

  std::ifstream in(dir.path() / "front.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "method,weight_index,w_1,w_2,r_1,r_2,stderr_1,stderr_2");
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    REQUIRE(row < table.rows.size());
    const std::size_t last_comma = line.rfind(',');
    const std::size_t r1_start = [&] {
      // method,weight_index,w_1,w_2 -> fifth field starts after 4 commas
      std::size_t pos = 0;
      for (int i = 0; i < 4; ++i) pos = line.find(',', pos) + 1;
      return pos;
    }();
    const double r1 = std::strtod(line.c_str() + r1_start, nullptr);
    CHECK(r1 == table.rows[row].reward[0]);
    (void)last_comma;
    ++row;
  }
  CHECK(row == table.rows.size());
}
