#include "moalab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

namespace moalab {

double log_sum_exp(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

TabularPolicy TabularPolicy::zeros(EnvSpec env) {
  env.validate();
  TabularPolicy p;
  p.env_ = std::move(env);
  p.states_ = p.env_.num_states();
  p.params_.assign(static_cast<std::size_t>(p.states_) * p.env_.prompts.size() *
                       p.env_.vocab_size,
                   0.0);
  return p;
}

TabularPolicy TabularPolicy::random_init(EnvSpec env, double stddev, Rng& rng) {
  TabularPolicy p = zeros(std::move(env));
  for (double& v : p.params_) v = rng.normal(0.0, stddev);
  return p;
}

std::span<const double> TabularPolicy::logits_row(int prompt_idx, std::int64_t state) const {
  return {params_.data() + row_offset(prompt_idx, state),
          static_cast<std::size_t>(env_.vocab_size)};
}

std::span<double> TabularPolicy::logits_row(int prompt_idx, std::int64_t state) {
  return {params_.data() + row_offset(prompt_idx, state),
          static_cast<std::size_t>(env_.vocab_size)};
}

bool TabularPolicy::same_shape(const TabularPolicy& other) const {
  return env_ == other.env_ && params_.size() == other.params_.size();
}

void TabularPolicy::check_finite() const {
  for (double v : params_) {
    if (!std::isfinite(v)) raise(Errc::divergence_detected, "non-finite policy parameter");
  }
}

std::span<const double> next_logits(const TabularPolicy& policy, PromptId prompt,
                                    std::span<const TokenId> prefix) {
  const int pi = policy.env().prompt_index(prompt);
  const std::int64_t state = state_index(policy.env(), prefix);
  return policy.logits_row(pi, state);
}

double log_prob_seq(const TabularPolicy& policy, PromptId prompt, const Response& y) {
  const EnvSpec& env = policy.env();
  env.check_response(y);
  const int pi = env.prompt_index(prompt);
  double lp = 0.0;
  std::int64_t state = 0;  // root; next states derived incrementally
  std::int64_t offset = 0;
  std::int64_t within = 0;
  for (int t = 0; t < env.response_len; ++t) {
    auto row = policy.logits_row(pi, state);
    lp += row[static_cast<std::size_t>(y[t])] - log_sum_exp(row);
    offset = offset * env.vocab_size + 1;
    within = within * env.vocab_size + y[t];
    state = offset + within;
  }
  return lp;
}

Response sample_response(const TabularPolicy& policy, PromptId prompt, double temperature,
                         Rng& rng) {
  if (temperature < 0.0 || !std::isfinite(temperature)) {
    raise(Errc::invalid_temperature, "temperature must be >= 0");
  }
  const EnvSpec& env = policy.env();
  const int pi = env.prompt_index(prompt);
  const std::size_t v = static_cast<std::size_t>(env.vocab_size);
  Response y;
  y.reserve(static_cast<std::size_t>(env.response_len));
  std::vector<double> probs(v);
  std::vector<double> scaled(v);
  for (int t = 0; t < env.response_len; ++t) {
    auto row = policy.logits_row(pi, state_index(env, y));
    if (temperature == 0.0) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < v; ++i) {
        if (row[i] > row[best]) best = i;  // ties keep the lowest index
      }
      y.push_back(static_cast<TokenId>(best));
    } else {
      for (std::size_t i = 0; i < v; ++i) scaled[i] = row[i] / temperature;
      softmax_into(scaled, probs);
      y.push_back(static_cast<TokenId>(rng.categorical(probs)));
    }
  }
  return y;
}

TabularPolicy merge_params(std::span<const TabularPolicy> policies, const WeightVector& w) {
  if (policies.empty() || policies.size() != w.size()) {
    raise(Errc::shape_mismatch, "need one weight per policy");
  }
  w.validate();
  for (const TabularPolicy& p : policies) {
    if (!p.same_shape(policies.front())) {
      raise(Errc::shape_mismatch, "policies disagree on env or parameter shape");
    }
  }
  TabularPolicy merged = TabularPolicy::zeros(policies.front().env());
  auto out = merged.params();
  for (std::size_t i = 0; i < policies.size(); ++i) {
    if (w[i] == 0.0) continue;  // exactness at simplex vertices
    auto src = policies[i].params();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[i] * src[k];
  }
  return merged;
}

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const TabularPolicy& policy, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "moalab-policy";
  j["version"] = kCheckpointVersion;
  j["env"] = {{"vocab_size", policy.env().vocab_size},
              {"response_len", policy.env().response_len},
              {"prompts", policy.env().prompts},
              {"seed", policy.env().seed},
              {"enumeration_budget", policy.env().enumeration_budget}};
  j["params"] = std::vector<double>(policy.params().begin(), policy.params().end());
  std::ofstream out(path);
  if (!out) raise(Errc::io_error, "cannot write " + path.string());
  out << j.dump() << '\n';
}

TabularPolicy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_error, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "moalab-policy" || j.value("version", 0) != kCheckpointVersion) {
    raise(Errc::schema_error, "unrecognized checkpoint format in " + path.string());
  }
  EnvSpec env;
  try {
    const auto& je = j.at("env");
    env.vocab_size = je.at("vocab_size").get<int>();
    env.response_len = je.at("response_len").get<int>();
    env.prompts = je.at("prompts").get<std::vector<PromptId>>();
    env.seed = je.at("seed").get<std::uint64_t>();
    env.enumeration_budget = je.at("enumeration_budget").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::schema_error, path.string() + ": " + e.what());
  }
  TabularPolicy policy = TabularPolicy::zeros(env);
  auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != policy.params().size()) {
    raise(Errc::schema_error, "checkpoint parameter count mismatch in " + path.string());
  }
  std::copy(params.begin(), params.end(), policy.params().begin());
  policy.check_finite();
  return policy;
}

}  // namespace moalab
