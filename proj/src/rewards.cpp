#include "moalab/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace moalab {

namespace {

bool in_set(const std::vector<TokenId>& set, TokenId tok) {
  return std::find(set.begin(), set.end(), tok) != set.end();
}

const std::vector<double>& weights_for(const RewardSpec& spec, PromptId prompt) {
  auto it = spec.per_prompt_weights.find(prompt);
  return it == spec.per_prompt_weights.end() ? spec.token_weights : it->second;
}

}  // namespace

void RewardSpec::validate(const EnvSpec& env) const {
  switch (kind) {
    case RewardKind::token_count_positive:
    case RewardKind::token_count_negative:
      if (token_set.empty()) raise(Errc::invalid_reward_spec, name + ": empty token set");
      for (TokenId tok : token_set) {
        if (tok < 0 || tok >= env.vocab_size) {
          raise(Errc::invalid_reward_spec, name + ": token outside vocab");
        }
      }
      break;
    case RewardKind::target_match:
      env.check_response(target);
      break;
    case RewardKind::weighted_token_sum: {
      if (static_cast<int>(token_weights.size()) != env.vocab_size) {
        raise(Errc::invalid_reward_spec, name + ": need one weight per token");
      }
      for (const auto& [prompt, w] : per_prompt_weights) {
        if (static_cast<int>(w.size()) != env.vocab_size) {
          raise(Errc::invalid_reward_spec, name + ": per-prompt weight size mismatch");
        }
      }
      for (double v : token_weights) {
        if (!std::isfinite(v)) raise(Errc::invalid_reward_spec, name + ": non-finite weight");
      }
      break;
    }
  }
}

double RewardSpec::bound_constant() const {
  switch (kind) {
    case RewardKind::token_count_positive:
    case RewardKind::token_count_negative:
    case RewardKind::target_match:
      return 1.0;
    case RewardKind::weighted_token_sum: {
      double c = 0.0;
      for (double v : token_weights) c = std::max(c, std::abs(v));
      for (const auto& [prompt, w] : per_prompt_weights) {
        for (double v : w) c = std::max(c, std::abs(v));
      }
      return c;
    }
  }
  return 0.0;
}

double eval_reward(const RewardSpec& spec, PromptId prompt, const Response& y) {
  switch (spec.kind) {
    case RewardKind::token_count_positive: {
      if (spec.token_set.empty()) raise(Errc::invalid_reward_spec, spec.name + ": empty token set");
      double count = 0.0;
      for (TokenId tok : y) count += in_set(spec.token_set, tok) ? 1.0 : 0.0;
      return count;
    }
    case RewardKind::token_count_negative: {
      if (spec.token_set.empty()) raise(Errc::invalid_reward_spec, spec.name + ": empty token set");
      double count = 0.0;
      for (TokenId tok : y) count += in_set(spec.token_set, tok) ? 1.0 : 0.0;
      return -count;
    }
    case RewardKind::target_match: {
      if (spec.target.size() != y.size()) {
        raise(Errc::invalid_reward_spec, spec.name + ": target length mismatch");
      }
      double matches = 0.0;
      for (std::size_t t = 0; t < y.size(); ++t) matches += y[t] == spec.target[t] ? 1.0 : 0.0;
      return matches;
    }
    case RewardKind::weighted_token_sum: {
      const auto& w = weights_for(spec, prompt);
      double sum = 0.0;
      for (TokenId tok : y) {
        if (tok < 0 || tok >= static_cast<TokenId>(w.size())) {
          raise(Errc::invalid_reward_spec, spec.name + ": token outside weight table");
        }
        sum += w[static_cast<std::size_t>(tok)];
      }
      return sum;
    }
  }
  raise(Errc::invalid_reward_spec, spec.name + ": unknown kind");
}

RewardVector eval_reward_vector(std::span<const RewardSpec> specs, PromptId prompt,
                                const Response& y) {
  RewardVector r;
  r.reserve(specs.size());
  for (const RewardSpec& spec : specs) r.push_back(eval_reward(spec, prompt, y));
  return r;
}

std::vector<RewardSpec> reward_preset(const std::string& name, const EnvSpec& env) {
  auto counter = [](std::string spec_name, RewardKind kind, std::vector<TokenId> tokens) {
    RewardSpec spec;
    spec.name = std::move(spec_name);
    spec.kind = kind;
    spec.token_set = std::move(tokens);
    return spec;
  };
  std::vector<RewardSpec> specs;
  if (name == "toy-2obj" || name == "toy-3obj") {
    specs.push_back(counter("h_count", RewardKind::token_count_positive, {0, 1, 2}));
    specs.push_back(counter("s_penalty", RewardKind::token_count_negative, {6, 7}));
    if (name == "toy-3obj") {
      specs.push_back(counter("four_count", RewardKind::token_count_positive, {4}));
    }
  } else if (name == "corr-verb") {
    RewardSpec correctness;
    correctness.name = "correctness";
    correctness.kind = RewardKind::target_match;
    correctness.target.resize(static_cast<std::size_t>(env.response_len));
    for (int t = 0; t < env.response_len; ++t) {
      correctness.target[static_cast<std::size_t>(t)] = 1 + t % (env.vocab_size - 1);
    }
    specs.push_back(std::move(correctness));
    std::vector<TokenId> nonzero;
    for (TokenId tok = 1; tok < env.vocab_size; ++tok) nonzero.push_back(tok);
    specs.push_back(counter("verbosity", RewardKind::token_count_positive, std::move(nonzero)));
  } else {
    raise(Errc::invalid_reward_spec, "unknown preset '" + name + "'");
  }
  for (const RewardSpec& spec : specs) spec.validate(env);
  return specs;
}

}  // namespace moalab
