#include "moalab/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moalab/csvio.hpp"

namespace moalab {

namespace {

// log(1 + exp(-z)), stable for both signs.
double softplus_neg(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

// sigmoid(-z) = 1/(1+exp(z)); saturates cleanly for large |z|.
double sigmoid_neg(double z) { return 1.0 / (1.0 + std::exp(z)); }

// Log-probability of y with the visited state indices captured for the
// backward pass.
double logprob_with_states(const TabularPolicy& policy, int prompt_idx, const Response& y,
                           std::vector<std::int64_t>& states) {
  const EnvSpec& env = policy.env();
  states.clear();
  double lp = 0.0;
  std::int64_t offset = 0;
  std::int64_t within = 0;
  std::int64_t state = 0;
  for (int t = 0; t < env.response_len; ++t) {
    states.push_back(state);
    auto row = policy.logits_row(prompt_idx, state);
    lp += row[static_cast<std::size_t>(y[t])] - log_sum_exp(row);
    offset = offset * env.vocab_size + 1;
    within = within * env.vocab_size + y[t];
    state = offset + within;
  }
  return lp;
}

// grad += coef * d log pi_theta(y|x) / d theta. Touches only the rows visited
// by y: +coef on the taken token, -coef * softmax on the whole row.
void add_logprob_grad(const TabularPolicy& policy, int prompt_idx, const Response& y,
                      std::span<const std::int64_t> states, double coef, std::span<double> grad,
                      std::vector<double>& probs) {
  if (grad.empty() || coef == 0.0) return;
  const int v = policy.env().vocab_size;
  probs.resize(static_cast<std::size_t>(v));
  for (std::size_t t = 0; t < states.size(); ++t) {
    auto row = policy.logits_row(prompt_idx, states[t]);
    softmax_into(row, probs);
    const std::int64_t base = policy.row_offset(prompt_idx, states[t]);
    grad[static_cast<std::size_t>(base + y[t])] += coef;
    for (int i = 0; i < v; ++i) {
      grad[static_cast<std::size_t>(base + i)] -= coef * probs[static_cast<std::size_t>(i)];
    }
  }
}

void check_pair(const TabularPolicy& theta, const TabularPolicy& ref,
                const PreferenceInstance& inst, std::size_t objective) {
  if (!theta.same_shape(ref)) raise(Errc::shape_mismatch, "theta and reference differ in shape");
  if (!inst.trainable()) raise(Errc::schema_error, "instance has no token content");
  if (objective >= inst.p.size()) {
    raise(Errc::shape_mismatch, "objective index " + std::to_string(objective) +
                                    " out of range for " + std::to_string(inst.p.size()) +
                                    " labels");
  }
}

struct MarginParts {
  double margin = 0.0;  // Delta(y_b) - Delta(y_a)
  int prompt_idx = 0;
  std::vector<std::int64_t> states_a;
  std::vector<std::int64_t> states_b;
  double logp_b = 0.0;
};

MarginParts margin_parts(const TabularPolicy& theta, const TabularPolicy& ref,
                         const PreferenceInstance& inst) {
  MarginParts parts;
  parts.prompt_idx = theta.env().prompt_index(inst.prompt);
  const double lpb = logprob_with_states(theta, parts.prompt_idx, inst.y_b, parts.states_b);
  const double lpa = logprob_with_states(theta, parts.prompt_idx, inst.y_a, parts.states_a);
  parts.logp_b = lpb;
  parts.margin = (lpb - log_prob_seq(ref, inst.prompt, inst.y_b)) -
                 (lpa - log_prob_seq(ref, inst.prompt, inst.y_a));
  return parts;
}

thread_local std::vector<double> g_probs_scratch;

}  // namespace

double dpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                    const PreferenceInstance& inst, int objective, double beta, double scale,
                    std::span<double> grad) {
  check_pair(theta, ref, inst, static_cast<std::size_t>(objective));
  const MarginParts parts = margin_parts(theta, ref, inst);
  const double p = static_cast<double>(inst.p[static_cast<std::size_t>(objective)]);
  const double z = p * beta * parts.margin;
  const double coef = scale * -sigmoid_neg(z) * p * beta;
  add_logprob_grad(theta, parts.prompt_idx, inst.y_b, parts.states_b, coef, grad,
                   g_probs_scratch);
  add_logprob_grad(theta, parts.prompt_idx, inst.y_a, parts.states_a, -coef, grad,
                   g_probs_scratch);
  return scale * softplus_neg(z);
}

double dpo_lw_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                       const PreferenceInstance& inst, const WeightVector& w, double beta,
                       double scale, std::span<double> grad) {
  if (w.size() != inst.p.size()) raise(Errc::shape_mismatch, "weight/label size mismatch");
  check_pair(theta, ref, inst, 0);
  // All objectives share the same margin, so the backward pass runs once with
  // the summed coefficient. Opposing labels under equal weights then cancel
  // exactly, not just approximately.
  const MarginParts parts = margin_parts(theta, ref, inst);
  double loss = 0.0;
  double coef = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;  // vertex identity: exactly the single-objective loss
    const double p = static_cast<double>(inst.p[i]);
    const double z = p * beta * parts.margin;
    const double term_scale = scale * w[i];
    loss += term_scale * softplus_neg(z);
    coef += term_scale * -sigmoid_neg(z) * p * beta;
  }
  add_logprob_grad(theta, parts.prompt_idx, inst.y_b, parts.states_b, coef, grad,
                   g_probs_scratch);
  add_logprob_grad(theta, parts.prompt_idx, inst.y_a, parts.states_a, -coef, grad,
                   g_probs_scratch);
  return loss;
}

double modpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                      std::span<const TabularPolicy> proxies, const PreferenceInstance& inst,
                      const WeightVector& w, std::size_t k, double beta, ImplicitRewardMode mode,
                      double scale, std::span<double> grad) {
  check_pair(theta, ref, inst, k);
  if (w.size() != inst.p.size()) raise(Errc::shape_mismatch, "weight/label size mismatch");
  if (proxies.size() != w.size()) raise(Errc::shape_mismatch, "need one proxy per objective");
  if (w[k] == 0.0) raise(Errc::degenerate_weight, "w_k = 0 for target objective");

  const MarginParts parts = margin_parts(theta, ref, inst);
  double proxy_margin = 0.0;  // sum_{j != k} w_j [r_j(y_b) - r_j(y_a)], proxies frozen
  for (std::size_t j = 0; j < proxies.size(); ++j) {
    if (j == k || w[j] == 0.0) continue;
    const double rb = implicit_reward(proxies[j], ref, inst.prompt, inst.y_b, beta, mode);
    const double ra = implicit_reward(proxies[j], ref, inst.prompt, inst.y_a, beta, mode);
    proxy_margin += w[j] * (rb - ra);
  }
  const double p = static_cast<double>(inst.p[k]);
  const double z = (beta / w[k]) * p * parts.margin - proxy_margin / w[k];
  const double coef = scale * -sigmoid_neg(z) * p * beta / w[k];
  add_logprob_grad(theta, parts.prompt_idx, inst.y_b, parts.states_b, coef, grad,
                   g_probs_scratch);
  add_logprob_grad(theta, parts.prompt_idx, inst.y_a, parts.states_a, -coef, grad,
                   g_probs_scratch);
  return scale * softplus_neg(z);
}

double nll_dpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& anchor,
                        const PreferenceInstance& inst, int objective, double beta, double alpha,
                        double scale, std::span<double> grad) {
  check_pair(theta, anchor, inst, static_cast<std::size_t>(objective));
  if (alpha < 0.0) raise(Errc::invalid_config, "alpha must be >= 0");
  const MarginParts parts = margin_parts(theta, anchor, inst);
  const double p = static_cast<double>(inst.p[static_cast<std::size_t>(objective)]);
  const double z = p * beta * parts.margin;
  const double coef = scale * -sigmoid_neg(z) * p * beta;
  add_logprob_grad(theta, parts.prompt_idx, inst.y_b, parts.states_b, coef, grad,
                   g_probs_scratch);
  add_logprob_grad(theta, parts.prompt_idx, inst.y_a, parts.states_a, -coef, grad,
                   g_probs_scratch);
  double loss = softplus_neg(z);
  if (alpha > 0.0) {
    // Per-token NLL penalty on the preferred response of this objective.
    const double len = static_cast<double>(theta.env().response_len);
    const bool pref_b = p > 0.0;
    const Response& y_pref = pref_b ? inst.y_b : inst.y_a;
    const auto& states_pref = pref_b ? parts.states_b : parts.states_a;
    double logp_pref = parts.logp_b;
    if (!pref_b) {
      std::vector<std::int64_t> tmp;
      logp_pref = logprob_with_states(theta, parts.prompt_idx, inst.y_a, tmp);
    }
    loss += alpha * (-logp_pref / len);
    add_logprob_grad(theta, parts.prompt_idx, y_pref, states_pref, -scale * alpha / len, grad,
                     g_probs_scratch);
  }
  return scale * loss;
}

namespace {

LossValue run_with_dense_grad(const TabularPolicy& theta,
                              const std::function<double(std::span<double>)>& fn) {
  LossValue out;
  out.grad.assign(theta.params().size(), 0.0);
  out.loss = fn(out.grad);
  return out;
}

}  // namespace

LossValue dpo_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                   const PreferenceInstance& inst, int objective, double beta) {
  return run_with_dense_grad(theta, [&](std::span<double> grad) {
    return dpo_loss_acc(theta, ref, inst, objective, beta, 1.0, grad);
  });
}

LossValue dpo_lw_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                      const PreferenceInstance& inst, const WeightVector& w, double beta) {
  return run_with_dense_grad(theta, [&](std::span<double> grad) {
    return dpo_lw_loss_acc(theta, ref, inst, w, beta, 1.0, grad);
  });
}

LossValue modpo_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                     std::span<const TabularPolicy> proxies, const PreferenceInstance& inst,
                     const WeightVector& w, std::size_t k, double beta, ImplicitRewardMode mode) {
  return run_with_dense_grad(theta, [&](std::span<double> grad) {
    return modpo_loss_acc(theta, ref, proxies, inst, w, k, beta, mode, 1.0, grad);
  });
}

LossValue nll_dpo_loss(const TabularPolicy& theta, const TabularPolicy& anchor,
                       const PreferenceInstance& inst, int objective, double beta, double alpha) {
  return run_with_dense_grad(theta, [&](std::span<double> grad) {
    return nll_dpo_loss_acc(theta, anchor, inst, objective, beta, alpha, 1.0, grad);
  });
}

double implicit_reward(const TabularPolicy& theta_i, const TabularPolicy& ref, PromptId prompt,
                       const Response& y, double beta, ImplicitRewardMode mode) {
  const double lp = log_prob_seq(theta_i, prompt, y);
  if (mode == ImplicitRewardMode::policy_logprob) return beta * lp;
  return beta * (lp - log_prob_seq(ref, prompt, y));
}

TrainResult train(const TabularPolicy& init, const InstanceLossFn& loss_fn,
                  const PreferenceDataset& dataset, const AlignConfig& config) {
  if (dataset.empty()) raise(Errc::empty_dataset, "cannot train on an empty dataset");
  if (config.steps < 0) raise(Errc::invalid_config, "steps must be >= 0");
  if (config.learning_rate <= 0.0) raise(Errc::invalid_config, "learning_rate must be > 0");
  if (config.beta <= 0.0) raise(Errc::invalid_config, "beta must be > 0");

  TrainResult result;
  result.policy = init;
  const std::size_t n_params = result.policy.params().size();
  std::vector<double> grad(n_params);
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  if (config.optimizer == OptimizerKind::adam) {
    adam_m.assign(n_params, 0.0);
    adam_v.assign(n_params, 0.0);
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  std::size_t cursor = 0;
  const std::size_t batch =
      config.batch_size > 0 ? std::min<std::size_t>(config.batch_size, dataset.size())
                            : dataset.size();
  const bool minibatch = config.batch_size > 0 && batch < dataset.size();

  for (int step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(batch);
    if (minibatch) {
      for (std::size_t b = 0; b < batch; ++b) {
        if (cursor == 0) {
          for (std::size_t i = order.size(); i-- > 1;) {
            std::size_t j = static_cast<std::size_t>(rng.uniform_below(i + 1));
            std::swap(order[i], order[j]);
          }
        }
        loss += loss_fn(result.policy, dataset[order[cursor]], scale, grad);
        cursor = (cursor + 1) % order.size();
      }
    } else {
      for (const PreferenceInstance& inst : dataset) {
        loss += loss_fn(result.policy, inst, scale, grad);
      }
    }
    if (!std::isfinite(loss)) {
      std::string trace = "loss trace tail:";
      const std::size_t start = result.loss_trace.size() > 8 ? result.loss_trace.size() - 8 : 0;
      for (std::size_t i = start; i < result.loss_trace.size(); ++i) {
        trace += " " + std::to_string(result.loss_trace[i]);
      }
      raise(Errc::divergence_detected,
            "non-finite loss at step " + std::to_string(step) + "; " + trace);
    }
    result.loss_trace.push_back(loss);

    auto params = result.policy.params();
    if (config.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < n_params; ++i) params[i] -= config.learning_rate * grad[i];
    } else {
      const double b1 = config.adam_beta1;
      const double b2 = config.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, step + 1);
      const double c2 = 1.0 - std::pow(b2, step + 1);
      for (std::size_t i = 0; i < n_params; ++i) {
        adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
        adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
        params[i] -= config.learning_rate * (adam_m[i] / c1) /
                     (std::sqrt(adam_v[i] / c2) + config.adam_eps);
      }
    }
  }
  return result;
}

std::vector<TabularPolicy> soups_align(const TabularPolicy& init, const TabularPolicy& ref,
                                       std::span<const PreferenceDataset> datasets_per_objective,
                                       const AlignConfig& config) {
  if (datasets_per_objective.empty()) raise(Errc::empty_dataset, "no objective datasets");
  std::vector<TabularPolicy> policies;
  policies.reserve(datasets_per_objective.size());
  for (std::size_t i = 0; i < datasets_per_objective.size(); ++i) {
    const int objective = static_cast<int>(i);
    auto loss = [&, objective](const TabularPolicy& theta, const PreferenceInstance& inst,
                               double scale, std::span<double> grad) {
      return dpo_loss_acc(theta, ref, inst, objective, config.beta, scale, grad);
    };
    policies.push_back(train(init, loss, datasets_per_objective[i], config).policy);
  }
  return policies;
}

void write_loss_trace_csv(std::span<const double> trace, const std::filesystem::path& path) {
  CsvWriter csv(path);
  csv.header({"step", "loss"});
  for (std::size_t i = 0; i < trace.size(); ++i) {
    csv.field(static_cast<std::int64_t>(i)).field(trace[i]);
    csv.end_row();
  }
}

}  // namespace moalab
