#include "moalab/pareto.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "moalab/csvio.hpp"

namespace moalab {

const EnvSpec& system_env(const EvalSystem& system) {
  return std::visit([](const auto& s) -> const EnvSpec& { return s.env(); }, system);
}

void system_next_log_distribution(const EvalSystem& system, PromptId prompt,
                                  std::span<const TokenId> prefix, std::span<double> out) {
  if (const auto* policy = std::get_if<TabularPolicy>(&system)) {
    auto row = next_logits(*policy, prompt, prefix);
    const double lse = log_sum_exp(row);
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
    return;
  }
  mod_next_log_distribution(std::get<DecoderEnsemble>(system), prompt, prefix, out);
}

Response system_sample(const EvalSystem& system, PromptId prompt, double temperature, Rng& rng) {
  if (const auto* policy = std::get_if<TabularPolicy>(&system)) {
    return sample_response(*policy, prompt, temperature, rng);
  }
  return mod_generate(std::get<DecoderEnsemble>(system), prompt, temperature, rng);
}

namespace {

// Per-state log-distribution table for one prompt, filled once per state.
std::vector<std::vector<double>> log_distribution_table(const EvalSystem& system,
                                                        PromptId prompt) {
  const EnvSpec& env = system_env(system);
  const std::size_t v = static_cast<std::size_t>(env.vocab_size);
  std::vector<std::vector<double>> table(static_cast<std::size_t>(env.num_states()),
                                         std::vector<double>(v));
  Response prefix;
  prefix.reserve(static_cast<std::size_t>(env.response_len));
  auto walk = [&](auto&& self) -> void {
    const auto s = static_cast<std::size_t>(state_index(env, prefix));
    system_next_log_distribution(system, prompt, prefix, table[s]);
    if (static_cast<int>(prefix.size()) + 1 >= env.response_len) return;
    for (TokenId tok = 0; tok < env.vocab_size; ++tok) {
      prefix.push_back(tok);
      self(self);
      prefix.pop_back();
    }
  };
  walk(walk);
  return table;
}

}  // namespace

ExpectedRewards expected_rewards_exact(const EvalSystem& system,
                                       std::span<const RewardSpec> specs, const EnvSpec& env) {
  env.validate();
  env.num_sequences();  // EnumerationTooLarge guard
  ExpectedRewards out;
  out.mean.assign(specs.size(), 0.0);
  out.stderr_.assign(specs.size(), 0.0);
  for (PromptId prompt : env.prompts) {
    const auto table = log_distribution_table(system, prompt);
    ResponseEnumerator it(env);
    while (auto y = it.next()) {
      double logp = 0.0;
      std::int64_t offset = 0;
      std::int64_t within = 0;
      std::int64_t state = 0;
      for (int t = 0; t < env.response_len; ++t) {
        logp += table[static_cast<std::size_t>(state)][static_cast<std::size_t>((*y)[t])];
        offset = offset * env.vocab_size + 1;
        within = within * env.vocab_size + (*y)[t];
        state = offset + within;
      }
      const double p = std::exp(logp);
      for (std::size_t i = 0; i < specs.size(); ++i) {
        out.mean[i] += p * eval_reward(specs[i], prompt, *y);
      }
    }
  }
  for (double& m : out.mean) m /= static_cast<double>(env.prompts.size());
  return out;
}

ExpectedRewards expected_rewards_monte_carlo(const EvalSystem& system,
                                             std::span<const RewardSpec> specs,
                                             const EnvSpec& env, std::int64_t n, Rng& rng) {
  if (n < 2) raise(Errc::invalid_config, "monte carlo needs n >= 2");
  ExpectedRewards out;
  out.mean.assign(specs.size(), 0.0);
  out.stderr_.assign(specs.size(), 0.0);
  std::vector<double> m2(specs.size(), 0.0);  // Welford accumulators
  for (std::int64_t k = 0; k < n; ++k) {
    const PromptId prompt =
        env.prompts[static_cast<std::size_t>(rng.uniform_below(env.prompts.size()))];
    const Response y = system_sample(system, prompt, 1.0, rng);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const double x = eval_reward(specs[i], prompt, y);
      const double delta = x - out.mean[i];
      out.mean[i] += delta / static_cast<double>(k + 1);
      m2[i] += delta * (x - out.mean[i]);
    }
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    out.stderr_[i] = std::sqrt(m2[i] / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return out;
}

namespace {

// a dominates b: >= everywhere, > somewhere.
bool dominates(const RewardVector& a, const RewardVector& b) {
  bool strict = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return false;
    if (a[i] > b[i]) strict = true;
  }
  return strict;
}

}  // namespace

std::vector<std::size_t> pareto_front_indices(std::span<const RewardVector> points) {
  if (points.empty()) raise(Errc::empty_dataset, "no points");
  for (const RewardVector& p : points) {
    if (p.size() != points.front().size()) raise(Errc::shape_mismatch, "mixed dimensionality");
  }
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (j != i && dominates(points[j], points[i])) dominated = true;
    }
    if (!dominated) front.push_back(i);
  }
  return front;
}

std::vector<RewardVector> pareto_front(std::span<const RewardVector> points) {
  std::vector<RewardVector> out;
  for (std::size_t i : pareto_front_indices(points)) out.push_back(points[i]);
  return out;
}

double hypervolume(std::span<const RewardVector> front, const RewardVector& reference) {
  if (front.empty()) return 0.0;
  const std::size_t dims = reference.size();
  if (dims < 1 || dims > 4) raise(Errc::invalid_config, "hypervolume supports 1..4 dimensions");
  for (const RewardVector& p : front) {
    if (p.size() != dims) raise(Errc::shape_mismatch, "point/reference dimension mismatch");
    for (std::size_t d = 0; d < dims; ++d) {
      if (!(p[d] >= reference[d])) {
        raise(Errc::reference_violation, "front point below reference in dimension " +
                                             std::to_string(d));
      }
    }
  }

  if (dims == 1) {
    double best = reference[0];
    for (const RewardVector& p : front) best = std::max(best, p[0]);
    return best - reference[0];
  }

  if (dims == 2) {
    // Sweep x descending; each point contributes the strip above the best y
    // seen so far.
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (front[a][0] != front[b][0]) return front[a][0] > front[b][0];
      return front[a][1] > front[b][1];
    });
    double hv = 0.0;
    double best_y = reference[1];
    for (std::size_t i : order) {
      if (front[i][1] > best_y) {
        hv += (front[i][0] - reference[0]) * (front[i][1] - best_y);
        best_y = front[i][1];
      }
    }
    return hv;
  }

  // 3-4 dimensions: inclusion-exclusion over the boxes [reference, point].
  // Dominated points never change the union, so reduce to the maximal set.
  std::vector<RewardVector> pts;
  for (std::size_t i : pareto_front_indices(front)) {
    const RewardVector& p = front[i];
    if (std::find(pts.begin(), pts.end(), p) == pts.end()) pts.push_back(p);
  }
  constexpr std::size_t kMaxPoints = 25;
  if (pts.size() > kMaxPoints) {
    raise(Errc::invalid_config,
          "inclusion-exclusion hypervolume limited to " + std::to_string(kMaxPoints) +
              " non-dominated points, got " + std::to_string(pts.size()));
  }
  const std::size_t n = pts.size();
  double hv = 0.0;
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    double vol = 1.0;
    for (std::size_t d = 0; d < dims && vol > 0.0; ++d) {
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (std::size_t{1} << i)) lo = std::min(lo, pts[i][d]);
      }
      vol *= std::max(0.0, lo - reference[d]);
    }
    const int bits = std::popcount(mask);
    hv += (bits % 2 == 1 ? 1.0 : -1.0) * vol;
  }
  return hv;
}

FrontTable front_table(std::span<const MethodSystems> methods,
                       std::span<const WeightVector> grid, std::span<const RewardSpec> specs,
                       const EnvSpec& env, EvalMode mode, std::int64_t mc_samples,
                       std::uint64_t mc_seed) {
  if (methods.empty() || grid.empty()) raise(Errc::invalid_config, "empty method or weight list");
  FrontTable table;
  Rng rng(mc_seed);
  for (const MethodSystems& method : methods) {
    if (method.systems.size() != grid.size()) {
      raise(Errc::shape_mismatch,
            "method '" + method.tag + "' must supply one system per weight");
    }
    for (std::size_t wi = 0; wi < grid.size(); ++wi) {
      ExpectedRewards er =
          mode == EvalMode::exact
              ? expected_rewards_exact(method.systems[wi], specs, env)
              : expected_rewards_monte_carlo(method.systems[wi], specs, env, mc_samples, rng);
      table.rows.push_back(FrontRow{method.tag, static_cast<int>(wi), grid[wi],
                                    std::move(er.mean), std::move(er.stderr_)});
    }
  }

  const std::size_t dims = specs.size();
  table.reference.assign(dims, std::numeric_limits<double>::infinity());
  for (const FrontRow& row : table.rows) {
    for (std::size_t d = 0; d < dims; ++d) {
      table.reference[d] = std::min(table.reference[d], row.reward[d]);
    }
  }
  for (double& r : table.reference) r -= 1e-6;

  for (const MethodSystems& method : methods) {
    std::vector<RewardVector> points;
    for (const FrontRow& row : table.rows) {
      if (row.method == method.tag) points.push_back(row.reward);
    }
    table.hypervolume_by_method[method.tag] = hypervolume(points, table.reference);
  }
  return table;
}

void write_front_csv(const FrontTable& table, const std::filesystem::path& path) {
  if (table.rows.empty()) raise(Errc::empty_dataset, "empty front table");
  CsvWriter csv(path);
  std::vector<std::string> columns = {"method", "weight_index"};
  for (std::size_t i = 0; i < table.rows.front().weight.size(); ++i) {
    columns.push_back("w_" + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < table.rows.front().reward.size(); ++i) {
    columns.push_back("r_" + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < table.rows.front().reward.size(); ++i) {
    columns.push_back("stderr_" + std::to_string(i + 1));
  }
  csv.header(columns);
  for (const FrontRow& row : table.rows) {
    csv.field(row.method).field(row.weight_index);
    for (double w : row.weight.w) csv.field(w);
    for (double r : row.reward) csv.field(r);
    for (double s : row.stderr_) csv.field(s);
    csv.end_row();
  }
}

void write_hypervolume_csv(const FrontTable& table, const std::filesystem::path& path) {
  CsvWriter csv(path);
  std::vector<std::string> columns = {"method", "hypervolume"};
  for (std::size_t i = 0; i < table.reference.size(); ++i) {
    columns.push_back("ref_" + std::to_string(i + 1));
  }
  csv.header(columns);
  for (const auto& [method, hv] : table.hypervolume_by_method) {
    csv.field(method).field(hv);
    for (double r : table.reference) csv.field(r);
    csv.end_row();
  }
}

}  // namespace moalab
