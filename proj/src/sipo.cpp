#include "moalab/sipo.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "moalab/csvio.hpp"

#ifndef MOALAB_DEFAULT_ASSETS_DIR
#define MOALAB_DEFAULT_ASSETS_DIR "assets/prompts"
#endif

namespace moalab {

void SipoConfig::resolve_defaults(std::size_t n_objectives) {
  if (weight_grid.empty()) {
    if (n_objectives == 2) {
      weight_grid = two_objective_grid(6);
    } else {
      for (std::size_t i = 0; i < n_objectives; ++i) {
        weight_grid.push_back(WeightVector::vertex(n_objectives, i));
      }
      weight_grid.push_back(WeightVector::make(
          std::vector<double>(n_objectives, 1.0 / static_cast<double>(n_objectives))));
    }
  }
  if (filter_grid.empty()) filter_grid = weight_grid;
  if (reviewer_weight.size() == 0) reviewer_weight = WeightVector::vertex(n_objectives, 0);
  for (const WeightVector& w : weight_grid) {
    if (w.size() != n_objectives) raise(Errc::shape_mismatch, "weight grid dimension mismatch");
    w.validate();
  }
  for (const WeightVector& w : filter_grid) {
    if (w.size() != n_objectives) raise(Errc::shape_mismatch, "filter grid dimension mismatch");
    w.validate();
  }
  if (reviewer_weight.size() != n_objectives) {
    raise(Errc::shape_mismatch, "reviewer weight dimension mismatch");
  }
  reviewer_weight.validate();
}

std::vector<ParetoCandidate> stage1_sample(std::span<const TabularPolicy> policies,
                                           const SipoConfig& config, PromptId prompt, Rng& rng) {
  if (policies.empty()) raise(Errc::shape_mismatch, "no policies");
  std::vector<ParetoCandidate> candidates;
  candidates.reserve(config.weight_grid.size());
  for (const WeightVector& w : config.weight_grid) {
    DecoderEnsemble ens = DecoderEnsemble::make(
        std::vector<TabularPolicy>(policies.begin(), policies.end()), w);
    ParetoCandidate cand;
    cand.prompt = prompt;
    cand.y = mod_generate(ens, prompt, config.temperature, rng);
    cand.source_weight = w;
    candidates.push_back(std::move(cand));
  }
  return candidates;
}

double reviewer_score(const Response& y, PromptId prompt, std::span<const TabularPolicy> policies,
                      const TabularPolicy& ref, const SipoConfig& config) {
  double score = 0.0;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    if (config.reviewer_weight[i] == 0.0) continue;
    score += config.reviewer_weight[i] *
             implicit_reward(policies[i], ref, prompt, y, config.beta, config.implicit_mode);
  }
  return score;
}

namespace {

std::string response_to_text(const Response& y) {
  std::ostringstream out;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t) out << ' ';
    out << y[t];
  }
  return out.str();
}

void replace_all(std::string& text, const std::string& needle, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

ParetoCandidate edit_search(const ParetoCandidate& candidate,
                            std::span<const TabularPolicy> policies, const TabularPolicy& ref,
                            const SipoConfig& config) {
  const EnvSpec& env = policies.front().env();
  ParetoCandidate out = candidate;
  double current = reviewer_score(out.y, out.prompt, policies, ref, config);
  for (int pass = 0; pass < config.refine_max_iters; ++pass) {
    // Steepest ascent over single-token substitutions; ties keep the earliest
    // (position, token) neighbor for determinism.
    Response best_neighbor;
    double best_score = current;
    Response probe = out.y;
    for (std::size_t pos = 0; pos < probe.size(); ++pos) {
      const TokenId original = probe[pos];
      for (TokenId tok = 0; tok < env.vocab_size; ++tok) {
        if (tok == original) continue;
        probe[pos] = tok;
        const double score = reviewer_score(probe, out.prompt, policies, ref, config);
        if (score > best_score) {
          best_score = score;
          best_neighbor = probe;
        }
      }
      probe[pos] = original;
    }
    if (best_neighbor.empty()) break;  // local maximum
    out.y = std::move(best_neighbor);
    current = best_score;
  }
  out.refined = true;
  return out;
}

}  // namespace

ParetoCandidate stage2_refine(const ParetoCandidate& candidate,
                              std::span<const TabularPolicy> policies, const TabularPolicy& ref,
                              const SipoConfig& config, Rng& rng) {
  (void)rng;  // reserved for stochastic refiners
  switch (config.refiner) {
    case RefinerKind::noop:
      return candidate;
    case RefinerKind::edit_search:
      return edit_search(candidate, policies, ref, config);
    case RefinerKind::external_prompt: {
      if (config.external == nullptr) {
        raise(Errc::external_refiner_unavailable,
              "external_prompt refiner needs an attached transport");
      }
      PreferenceInstance shim;
      shim.prompt = candidate.prompt;
      const RenderedPrompts for_review =
          render_refiner_prompts(shim, candidate.y, "", config);
      const std::string review = config.external->review(for_review.review);
      const RenderedPrompts for_rewrite =
          render_refiner_prompts(shim, candidate.y, review, config);
      ParetoCandidate out = candidate;
      out.y = config.external->rewrite(for_rewrite.rewrite, candidate.y);
      policies.front().env().check_response(out.y);
      out.refined = true;
      return out;
    }
  }
  raise(Errc::invalid_config, "unknown refiner kind");
}

std::optional<Response> stage3_filter(std::span<const ParetoCandidate> candidates,
                                      const PreferenceInstance& inst,
                                      std::span<const TabularPolicy> policies,
                                      std::span<const TabularPolicy> merged_scorers,
                                      const TabularPolicy& ref, const SipoConfig& config) {
  if (candidates.empty()) return std::nullopt;
  std::vector<const TabularPolicy*> scorers;
  for (const TabularPolicy& p : policies) scorers.push_back(&p);
  for (const TabularPolicy& p : merged_scorers) scorers.push_back(&p);

  std::vector<double> score_a(scorers.size());
  std::vector<double> score_b(scorers.size());
  for (std::size_t s = 0; s < scorers.size(); ++s) {
    score_a[s] = implicit_reward(*scorers[s], ref, inst.prompt, inst.y_a, config.beta,
                                 config.implicit_mode);
    score_b[s] = implicit_reward(*scorers[s], ref, inst.prompt, inst.y_b, config.beta,
                                 config.implicit_mode);
  }

  std::optional<Response> best;
  double best_mean = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(scorers.size());
  for (const ParetoCandidate& cand : candidates) {
    bool survives = true;
    double sum = 0.0;
    for (std::size_t s = 0; s < scorers.size() && survives; ++s) {
      scores[s] = implicit_reward(*scorers[s], ref, inst.prompt, cand.y, config.beta,
                                  config.implicit_mode);
      // Strict on both originals; any tie rejects.
      if (!(scores[s] > score_a[s]) || !(scores[s] > score_b[s])) survives = false;
      sum += scores[s];
    }
    if (!survives) continue;
    const double mean = sum / static_cast<double>(scorers.size());
    if (mean > best_mean || (mean == best_mean && best && cand.y < *best)) {
      best_mean = mean;
      best = cand.y;
    }
  }
  return best;
}

std::vector<ConflictPair> build_conflict_pairs(const PreferenceInstance& inst, const Response& y_c,
                                               PairMode mode) {
  if (y_c == inst.y_a || y_c == inst.y_b) {
    raise(Errc::degenerate_pair, "y_c equals one of the original responses");
  }
  const std::vector<int> all_plus(inst.p.size(), 1);
  std::vector<ConflictPair> pairs;
  switch (mode) {
    case PairMode::yc_vs_both:
      pairs.push_back({inst.prompt, y_c, inst.y_a, all_plus});
      pairs.push_back({inst.prompt, y_c, inst.y_b, all_plus});
      break;
    case PairMode::yc_vs_yw:
    case PairMode::yc_yw_plus_ywyl: {
      std::set<Response> seen;
      for (std::size_t i = 0; i < inst.p.size(); ++i) {
        const Response& y_w = inst.p[i] > 0 ? inst.y_b : inst.y_a;
        if (seen.insert(y_w).second) pairs.push_back({inst.prompt, y_c, y_w, all_plus});
      }
      break;
    }
    case PairMode::ywyl_only:
      break;  // re-alignment uses the original conflicting instance directly
  }
  return pairs;
}

PreferenceInstance to_instance(const ConflictPair& pair) {
  PreferenceInstance inst;
  inst.prompt = pair.prompt;
  inst.y_a = pair.y_l;
  inst.y_b = pair.y_c;
  inst.p = pair.p;
  return inst;
}

namespace {

std::vector<std::size_t> pick_budget(std::vector<std::size_t> indices, std::int64_t budget,
                                     Rng& rng) {
  if (budget <= 0 || static_cast<std::int64_t>(indices.size()) <= budget) return indices;
  for (std::int64_t i = 0; i < budget; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        static_cast<std::size_t>(rng.uniform_below(indices.size() - static_cast<std::size_t>(i)));
    std::swap(indices[static_cast<std::size_t>(i)], indices[j]);
  }
  indices.resize(static_cast<std::size_t>(budget));
  std::sort(indices.begin(), indices.end());  // keep dataset order for determinism of the loop
  return indices;
}

}  // namespace

SipoRoundResult run_sipo_round(std::span<const TabularPolicy> policies, const TabularPolicy& ref,
                               const PreferenceDataset& dataset,
                               std::span<const RewardSpec> specs, const SipoConfig& config_in,
                               const AlignConfig& align_config) {
  if (policies.empty()) raise(Errc::shape_mismatch, "no policies");
  if (dataset.empty()) raise(Errc::empty_dataset, "empty dataset");
  SipoConfig config = config_in;
  config.resolve_defaults(policies.size());

  SipoRoundResult result;
  result.policies.assign(policies.begin(), policies.end());
  Rng rng(config.seed);

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].trainable()) continue;
    if (is_conflict(dataset[i]) != config.use_nonconflicting) selected.push_back(i);
  }
  selected = pick_budget(std::move(selected), config.max_conflicts, rng);
  result.report.instances_considered = static_cast<std::int64_t>(selected.size());

  std::vector<TabularPolicy> merged_scorers;
  merged_scorers.reserve(config.filter_grid.size());
  for (const WeightVector& w : config.filter_grid) {
    merged_scorers.push_back(merge_params(policies, w));
  }

  const std::size_t n_obj = specs.size();
  result.report.mean_truth_yc.assign(n_obj, 0.0);
  result.report.mean_truth_ya.assign(n_obj, 0.0);
  result.report.mean_truth_yb.assign(n_obj, 0.0);

  for (std::size_t idx : selected) {
    const PreferenceInstance& inst = dataset[idx];
    std::vector<ParetoCandidate> candidates = stage1_sample(policies, config, inst.prompt, rng);
    if (config.refiner != RefinerKind::noop) {
      const std::size_t sampled = candidates.size();
      for (std::size_t c = 0; c < sampled; ++c) {
        ParetoCandidate refined = stage2_refine(candidates[c], policies, ref, config, rng);
        if (refined.y != candidates[c].y) candidates.push_back(std::move(refined));
      }
    }
    result.report.candidates_generated += static_cast<std::int64_t>(candidates.size());

    std::optional<Response> y_c;
    if (config.filter_random) {
      // Filtering ablation: uniform pick among candidates distinct from the
      // originals, no Pareto check.
      std::vector<const Response*> eligible;
      for (const ParetoCandidate& cand : candidates) {
        if (cand.y != inst.y_a && cand.y != inst.y_b) eligible.push_back(&cand.y);
      }
      if (!eligible.empty()) {
        y_c = *eligible[static_cast<std::size_t>(rng.uniform_below(eligible.size()))];
      }
    } else {
      y_c = stage3_filter(candidates, inst, policies, merged_scorers, ref, config);
    }
    if (!y_c) continue;

    SipoInstanceRecord record;
    record.dataset_index = idx;
    record.y_c = *y_c;
    record.truth_yc = eval_reward_vector(specs, inst.prompt, *y_c);
    record.truth_ya = eval_reward_vector(specs, inst.prompt, inst.y_a);
    record.truth_yb = eval_reward_vector(specs, inst.prompt, inst.y_b);
    bool dominates_truth = true;
    for (std::size_t i = 0; i < n_obj; ++i) {
      result.report.mean_truth_yc[i] += record.truth_yc[i];
      result.report.mean_truth_ya[i] += record.truth_ya[i];
      result.report.mean_truth_yb[i] += record.truth_yb[i];
      if (record.truth_yc[i] < record.truth_ya[i] || record.truth_yc[i] < record.truth_yb[i]) {
        dominates_truth = false;
      }
    }
    if (dominates_truth) {
      result.report.truth_dominance_fraction += 1.0;
    }
    ++result.report.resolved;
    result.report.records.push_back(std::move(record));

    for (const ConflictPair& pair : build_conflict_pairs(inst, *y_c, config.pair_mode)) {
      result.improvement_set.push_back(to_instance(pair));
    }
    if (config.pair_mode == PairMode::yc_yw_plus_ywyl ||
        config.pair_mode == PairMode::ywyl_only) {
      result.improvement_set.push_back(inst);  // the original (conflicting) preference
    }
  }

  if (result.report.resolved > 0) {
    const double denom = static_cast<double>(result.report.resolved);
    for (std::size_t i = 0; i < n_obj; ++i) {
      result.report.mean_truth_yc[i] /= denom;
      result.report.mean_truth_ya[i] /= denom;
      result.report.mean_truth_yb[i] /= denom;
    }
    result.report.truth_dominance_fraction /= denom;
  }
  result.report.improvement_pairs = static_cast<std::int64_t>(result.improvement_set.size());

  if (result.improvement_set.empty()) {
    result.report.warnings.push_back(
        std::string(errc_name(Errc::empty_improvement_set)) +
        ": no instance produced a dominating response; policies returned unchanged");
    return result;
  }

  // Re-alignment: each policy fine-tunes from itself, anchored at itself.
  for (std::size_t i = 0; i < result.policies.size(); ++i) {
    const TabularPolicy anchor = result.policies[i];
    const int objective = static_cast<int>(i);
    auto loss = [&, objective](const TabularPolicy& theta, const PreferenceInstance& inst,
                               double scale, std::span<double> grad) {
      return nll_dpo_loss_acc(theta, anchor, inst, objective, align_config.beta,
                              align_config.alpha, scale, grad);
    };
    result.policies[i] = train(anchor, loss, result.improvement_set, align_config).policy;
  }
  return result;
}

void write_round_report_json(const SipoRoundReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["instances_considered"] = report.instances_considered;
  j["candidates_generated"] = report.candidates_generated;
  j["resolved"] = report.resolved;
  j["improvement_pairs"] = report.improvement_pairs;
  j["mean_truth_yc"] = report.mean_truth_yc;
  j["mean_truth_ya"] = report.mean_truth_ya;
  j["mean_truth_yb"] = report.mean_truth_yb;
  j["truth_dominance_fraction"] = report.truth_dominance_fraction;
  j["warnings"] = report.warnings;
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const SipoInstanceRecord& rec : report.records) {
    nlohmann::ordered_json r;
    r["dataset_index"] = rec.dataset_index;
    r["y_c"] = rec.y_c;
    r["truth_yc"] = rec.truth_yc;
    r["truth_ya"] = rec.truth_ya;
    r["truth_yb"] = rec.truth_yb;
    records.push_back(std::move(r));
  }
  j["records"] = std::move(records);
  std::ofstream out(path);
  if (!out) raise(Errc::io_error, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string prompt_template(const std::string& name, const std::string& assets_dir) {
  std::filesystem::path dir;
  if (!assets_dir.empty()) {
    dir = assets_dir;
  } else if (const char* env = std::getenv("MOALAB_ASSETS"); env != nullptr && *env != '\0') {
    dir = env;
  } else {
    dir = MOALAB_DEFAULT_ASSETS_DIR;
  }
  const std::filesystem::path path = dir / (name + ".txt");
  std::ifstream in(path);
  if (!in) raise(Errc::io_error, "prompt template not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RenderedPrompts render_refiner_prompts(const PreferenceInstance& inst, const Response& candidate,
                                       const std::string& review_text, const SipoConfig& config) {
  RenderedPrompts out;
  out.review = prompt_template(config.template_pair + "_review");
  out.rewrite = prompt_template(config.template_pair + "_rewrite");
  const std::string prompt_text = "prompt-" + std::to_string(inst.prompt);
  const std::string response_text = response_to_text(candidate);
  for (std::string* text : {&out.review, &out.rewrite}) {
    replace_all(*text, "{raw_prompt}", prompt_text);
    replace_all(*text, "{response}", response_text);
    replace_all(*text, "{review}", review_text);
  }
  return out;
}

}  // namespace moalab
