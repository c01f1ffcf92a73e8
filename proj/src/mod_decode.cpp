#include "moalab/mod_decode.hpp"

#include <algorithm>
#include <cmath>

namespace moalab {

DecoderEnsemble DecoderEnsemble::make(std::vector<TabularPolicy> policies, WeightVector w) {
  if (policies.empty() || policies.size() != w.size()) {
    raise(Errc::shape_mismatch, "need one weight per policy");
  }
  w.validate();
  for (const TabularPolicy& p : policies) {
    if (!p.same_shape(policies.front())) {
      raise(Errc::shape_mismatch, "ensemble policies disagree on env or shape");
    }
  }
  DecoderEnsemble ens;
  ens.policies = std::move(policies);
  ens.w = std::move(w);
  return ens;
}

void mod_next_log_distribution(const DecoderEnsemble& ens, PromptId prompt,
                               std::span<const TokenId> prefix, std::span<double> out) {
  const EnvSpec& env = ens.env();
  const int pi = env.prompt_index(prompt);
  const std::int64_t state = state_index(env, prefix);
  const std::size_t v = static_cast<std::size_t>(env.vocab_size);

  std::fill(out.begin(), out.end(), 0.0);
  thread_local std::vector<double> ls;
  ls.resize(v);
  auto add_log_softmax = [&](const TabularPolicy& policy, double weight) {
    auto row = policy.logits_row(pi, state);
    const double lse = log_sum_exp(row);
    for (std::size_t i = 0; i < v; ++i) out[i] += weight * (row[i] - lse);
  };

  if (ens.subtract_reference) {
    // log pi_ref + sum_i w_i (log pi_i - log pi_ref); identical to the plain
    // rule whenever the weights lie on the simplex.
    auto ref_row = ens.reference.logits_row(pi, state);
    const double ref_lse = log_sum_exp(ref_row);
    double residual = 1.0;
    for (std::size_t i = 0; i < ens.policies.size(); ++i) residual -= ens.w[i];
    for (std::size_t i = 0; i < v; ++i) out[i] = residual * (ref_row[i] - ref_lse);
  }
  for (std::size_t i = 0; i < ens.policies.size(); ++i) {
    if (ens.w[i] == 0.0) continue;  // vertices reproduce the single policy
    add_log_softmax(ens.policies[i], ens.w[i]);
  }
  // Renormalize so the output is a proper log-distribution.
  const double lse = log_sum_exp(out);
  for (double& x : out) x -= lse;
}

std::vector<double> mod_next_distribution(const DecoderEnsemble& ens, PromptId prompt,
                                          std::span<const TokenId> prefix) {
  const std::size_t v = static_cast<std::size_t>(ens.env().vocab_size);
  std::vector<double> logp(v);
  mod_next_log_distribution(ens, prompt, prefix, logp);
  std::vector<double> p(v);
  for (std::size_t i = 0; i < v; ++i) p[i] = std::exp(logp[i]);
  return p;
}

Response mod_generate(const DecoderEnsemble& ens, PromptId prompt, double temperature, Rng& rng) {
  if (temperature < 0.0 || !std::isfinite(temperature)) {
    raise(Errc::invalid_temperature, "temperature must be >= 0");
  }
  const EnvSpec& env = ens.env();
  const std::size_t v = static_cast<std::size_t>(env.vocab_size);
  Response y;
  y.reserve(static_cast<std::size_t>(env.response_len));
  std::vector<double> logp(v);
  std::vector<double> probs(v);
  for (int t = 0; t < env.response_len; ++t) {
    mod_next_log_distribution(ens, prompt, y, logp);
    if (temperature == 0.0) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < v; ++i) {
        if (logp[i] > logp[best]) best = i;
      }
      y.push_back(static_cast<TokenId>(best));
    } else {
      for (double& x : logp) x /= temperature;
      softmax_into(logp, probs);
      y.push_back(static_cast<TokenId>(rng.categorical(probs)));
    }
  }
  return y;
}

}  // namespace moalab
