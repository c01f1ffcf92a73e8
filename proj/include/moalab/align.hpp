#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "moalab/policy.hpp"
#include "moalab/prefdata.hpp"
#include "moalab/weights.hpp"

namespace moalab {

enum class OptimizerKind { sgd, adam };

struct AlignConfig {
  double beta = 0.1;
  double alpha = 0.1;
  double learning_rate = 0.05;
  int steps = 800;
  int batch_size = 0;  // 0 = full batch
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

// Scorer flavor used wherever a trained policy rates responses.
//   dpo_ratio       beta * (log pi_theta(y|x) - log pi_ref(y|x))
//   policy_logprob  beta * log pi_theta(y|x)
// Only differences across y at fixed x are consumed downstream, but the two
// modes can still rank candidates differently because the reference term does
// not cancel across different y.
enum class ImplicitRewardMode { dpo_ratio, policy_logprob };

struct LossValue {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as TabularPolicy::params()
};

// -log sigmoid( p_i * beta * [Delta(y_b) - Delta(y_a)] ),
// Delta(y) = log pi_theta(y|x) - log pi_ref(y|x). Exact analytic gradient.
LossValue dpo_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                   const PreferenceInstance& inst, int objective, double beta);

// sum_i w_i * dpo_loss(..., i). Zero-weight terms are skipped so simplex
// vertices equal the single-objective loss exactly.
LossValue dpo_lw_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                      const PreferenceInstance& inst, const WeightVector& w, double beta);

// -log sigmoid( (beta/w_k) * p_k * [Delta(y_b)-Delta(y_a)]
//               - (1/w_k) * sum_{j != k} w_j * [r_j(y_b)-r_j(y_a)] )
// with r_j the implicit reward under frozen proxies[j]. proxies[k] is unused.
// Errors: DegenerateWeight when w_k = 0.
LossValue modpo_loss(const TabularPolicy& theta, const TabularPolicy& ref,
                     std::span<const TabularPolicy> proxies, const PreferenceInstance& inst,
                     const WeightVector& w, std::size_t k, double beta,
                     ImplicitRewardMode mode);

// DPO term anchored at pi_anchor plus a per-token NLL penalty on the preferred
// response: ... + alpha * (-log pi_theta(y_pref|x) / L).
LossValue nll_dpo_loss(const TabularPolicy& theta, const TabularPolicy& anchor,
                       const PreferenceInstance& inst, int objective, double beta,
                       double alpha);

double implicit_reward(const TabularPolicy& theta_i, const TabularPolicy& ref, PromptId prompt,
                       const Response& y, double beta, ImplicitRewardMode mode);

// Per-instance loss: add `scale` times this instance's gradient into `grad`
// (when non-empty) and return the scaled loss contribution.
using InstanceLossFn = std::function<double(const TabularPolicy& theta,
                                            const PreferenceInstance& inst, double scale,
                                            std::span<double> grad)>;

// Accumulating forms used by train(); the LossValue wrappers above build on
// them. Gradient may be empty to skip the backward pass.
double dpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                    const PreferenceInstance& inst, int objective, double beta, double scale,
                    std::span<double> grad);
double dpo_lw_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                       const PreferenceInstance& inst, const WeightVector& w, double beta,
                       double scale, std::span<double> grad);
double modpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& ref,
                      std::span<const TabularPolicy> proxies, const PreferenceInstance& inst,
                      const WeightVector& w, std::size_t k, double beta, ImplicitRewardMode mode,
                      double scale, std::span<double> grad);
double nll_dpo_loss_acc(const TabularPolicy& theta, const TabularPolicy& anchor,
                        const PreferenceInstance& inst, int objective, double beta, double alpha,
                        double scale, std::span<double> grad);

struct TrainResult {
  TabularPolicy policy;
  std::vector<double> loss_trace;  // one mean-loss entry per step
};

// Runs `steps` optimizer updates (full batch, or seed-shuffled mini-batches
// when batch_size > 0). Deterministic per config. NaN/Inf loss aborts with
// DivergenceDetected.
TrainResult train(const TabularPolicy& init, const InstanceLossFn& loss_fn,
                  const PreferenceDataset& dataset, const AlignConfig& config);

// One DPO policy per objective, each trained from `init` against `ref` on its
// own dataset/labels. Merging is deferred to merge_params at evaluation time.
std::vector<TabularPolicy> soups_align(const TabularPolicy& init, const TabularPolicy& ref,
                                       std::span<const PreferenceDataset> datasets_per_objective,
                                       const AlignConfig& config);

void write_loss_trace_csv(std::span<const double> trace, const std::filesystem::path& path);

}  // namespace moalab
