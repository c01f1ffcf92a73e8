#include "moalab/prefdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace moalab {

namespace {

Response uniform_response(const EnvSpec& env, Rng& rng) {
  Response y(static_cast<std::size_t>(env.response_len));
  for (TokenId& tok : y) {
    tok = static_cast<TokenId>(rng.uniform_below(static_cast<std::uint64_t>(env.vocab_size)));
  }
  return y;
}

// Uniform sample of k distinct indices from `from`, preserving determinism.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> from, std::size_t k,
                                                    Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(from.size() - i));
    std::swap(from[i], from[j]);
  }
  from.resize(k);
  return from;
}

}  // namespace

PreferenceInstance label_instance(std::span<const RewardSpec> specs, PromptId prompt,
                                  const Response& y_a, const Response& y_b) {
  if (y_a == y_b) raise(Errc::tied_preference, "responses are identical");
  PreferenceInstance inst;
  inst.prompt = prompt;
  inst.y_a = y_a;
  inst.y_b = y_b;
  inst.p.reserve(specs.size());
  for (const RewardSpec& spec : specs) {
    const double ra = eval_reward(spec, prompt, y_a);
    const double rb = eval_reward(spec, prompt, y_b);
    if (ra == rb) {
      raise(Errc::tied_preference, "objective '" + spec.name + "' scores both responses equally");
    }
    inst.p.push_back(rb > ra ? 1 : -1);
  }
  return inst;
}

bool is_conflict(const PreferenceInstance& inst) {
  const auto [lo, hi] = std::minmax_element(inst.p.begin(), inst.p.end());
  return inst.p.size() > 1 && *lo != *hi;
}

DatasetStats conflict_ratio(const PreferenceDataset& dataset) {
  if (dataset.empty()) raise(Errc::empty_dataset, "no instances");
  DatasetStats stats;
  stats.n_instances = static_cast<std::int64_t>(dataset.size());
  stats.label_balance.assign(dataset.front().p.size(), 0.0);
  for (const PreferenceInstance& inst : dataset) {
    if (is_conflict(inst)) ++stats.n_conflicting;
    for (std::size_t i = 0; i < inst.p.size() && i < stats.label_balance.size(); ++i) {
      if (inst.p[i] > 0) stats.label_balance[i] += 1.0;
    }
  }
  for (double& b : stats.label_balance) b /= static_cast<double>(stats.n_instances);
  stats.conflict_ratio =
      static_cast<double>(stats.n_conflicting) / static_cast<double>(stats.n_instances);
  return stats;
}

PreferenceDataset generate_dataset(const EnvSpec& env, std::span<const RewardSpec> specs,
                                   std::int64_t n, const TabularPolicy* sampler, Rng& rng) {
  env.validate();
  if (n < 1) raise(Errc::invalid_config, "dataset size must be >= 1");
  if (specs.empty()) raise(Errc::invalid_reward_spec, "need at least one objective");
  constexpr int kMaxAttemptsPerInstance = 10'000;
  PreferenceDataset dataset;
  dataset.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttemptsPerInstance; ++attempt) {
      const PromptId prompt =
          env.prompts[static_cast<std::size_t>(rng.uniform_below(env.prompts.size()))];
      Response y_a = sampler ? sample_response(*sampler, prompt, 1.0, rng)
                             : uniform_response(env, rng);
      Response y_b = sampler ? sample_response(*sampler, prompt, 1.0, rng)
                             : uniform_response(env, rng);
      try {
        dataset.push_back(label_instance(specs, prompt, y_a, y_b));
        placed = true;
        break;
      } catch (const Error& e) {
        if (e.code() != Errc::tied_preference) throw;
      }
    }
    if (!placed) {
      raise(Errc::generation_stalled, "no tie-free pair found after " +
                                          std::to_string(kMaxAttemptsPerInstance) +
                                          " attempts (instance " + std::to_string(i) + ")");
    }
  }
  return dataset;
}

PreferenceDataset subsample_with_conflict_ratio(const PreferenceDataset& dataset,
                                                double target_ratio, std::int64_t size,
                                                Rng& rng) {
  if (dataset.empty()) raise(Errc::empty_dataset, "no instances");
  if (target_ratio < 0.0 || target_ratio > 1.0) {
    raise(Errc::invalid_config, "target ratio outside [0,1]");
  }
  if (size < 1) raise(Errc::invalid_config, "subsample size must be >= 1");

  std::vector<std::size_t> conflicting;
  std::vector<std::size_t> agreeing;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_conflict(dataset[i]) ? conflicting : agreeing).push_back(i);
  }
  // Round half up so e.g. 30% of 970 is reproducible.
  const auto want_conflicting =
      static_cast<std::int64_t>(std::floor(target_ratio * static_cast<double>(size) + 0.5));
  const std::int64_t want_agreeing = size - want_conflicting;
  if (want_conflicting > static_cast<std::int64_t>(conflicting.size())) {
    raise(Errc::insufficient_pool,
          "need " + std::to_string(want_conflicting) + " conflicting, pool has " +
              std::to_string(conflicting.size()) + " (short by " +
              std::to_string(want_conflicting - static_cast<std::int64_t>(conflicting.size())) +
              ")");
  }
  if (want_agreeing > static_cast<std::int64_t>(agreeing.size())) {
    raise(Errc::insufficient_pool,
          "need " + std::to_string(want_agreeing) + " non-conflicting, pool has " +
              std::to_string(agreeing.size()) + " (short by " +
              std::to_string(want_agreeing - static_cast<std::int64_t>(agreeing.size())) + ")");
  }

  PreferenceDataset out;
  out.reserve(static_cast<std::size_t>(size));
  for (std::size_t idx : sample_without_replacement(
           std::move(conflicting), static_cast<std::size_t>(want_conflicting), rng)) {
    out.push_back(dataset[idx]);
  }
  for (std::size_t idx : sample_without_replacement(
           std::move(agreeing), static_cast<std::size_t>(want_agreeing), rng)) {
    out.push_back(dataset[idx]);
  }
  return out;
}

namespace {

void check_label_vector(const nlohmann::json& jp, std::size_t line, std::vector<int>& out) {
  if (!jp.is_array() || jp.empty()) {
    raise(Errc::schema_error, "line " + std::to_string(line) + ": p must be a nonempty array");
  }
  for (const auto& v : jp) {
    if (!v.is_number_integer() || (v.get<int>() != 1 && v.get<int>() != -1)) {
      raise(Errc::schema_error,
            "line " + std::to_string(line) + ": labels must be -1 or +1");
    }
    out.push_back(v.get<int>());
  }
}

}  // namespace

PreferenceDataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io_error, "cannot read " + path.string());
  PreferenceDataset dataset;
  std::map<std::string, PromptId> prompt_ids;  // synthetic ids for string prompts
  std::string line;
  std::size_t line_no = 0;
  std::size_t n_objectives = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      raise(Errc::parse_error, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("prompt") || !j.contains("y_a") || !j.contains("y_b") ||
        !j.contains("p")) {
      raise(Errc::schema_error,
            "line " + std::to_string(line_no) + ": expected prompt/y_a/y_b/p fields");
    }
    PreferenceInstance inst;
    if (j["prompt"].is_number_integer()) {
      inst.prompt = j["prompt"].get<PromptId>();
    } else if (j["prompt"].is_string()) {
      const std::string key = j["prompt"].get<std::string>();
      auto [it, inserted] = prompt_ids.emplace(key, static_cast<PromptId>(prompt_ids.size()));
      inst.prompt = it->second;
    } else {
      raise(Errc::schema_error, "line " + std::to_string(line_no) + ": prompt must be int or string");
    }
    auto read_response = [&](const char* key, Response& tokens, std::string& text) {
      const auto& jr = j[key];
      if (jr.is_array()) {
        for (const auto& v : jr) {
          if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
            raise(Errc::schema_error, "line " + std::to_string(line_no) + ": " + key +
                                          " tokens must be nonnegative integers");
          }
          tokens.push_back(v.get<TokenId>());
        }
        if (tokens.empty()) {
          raise(Errc::schema_error, "line " + std::to_string(line_no) + ": empty " + key);
        }
      } else if (jr.is_string()) {
        text = jr.get<std::string>();
      } else {
        raise(Errc::schema_error,
              "line " + std::to_string(line_no) + ": " + key + " must be array or string");
      }
    };
    read_response("y_a", inst.y_a, inst.y_a_text);
    read_response("y_b", inst.y_b, inst.y_b_text);
    const bool a_tokens = !inst.y_a.empty();
    const bool b_tokens = !inst.y_b.empty();
    if (a_tokens != b_tokens) {
      raise(Errc::schema_error,
            "line " + std::to_string(line_no) + ": y_a and y_b must both be arrays or both strings");
    }
    if (a_tokens ? inst.y_a == inst.y_b : inst.y_a_text == inst.y_b_text) {
      raise(Errc::schema_error, "line " + std::to_string(line_no) + ": y_a equals y_b");
    }
    check_label_vector(j["p"], line_no, inst.p);
    if (n_objectives == 0) {
      n_objectives = inst.p.size();
    } else if (inst.p.size() != n_objectives) {
      raise(Errc::schema_error,
            "line " + std::to_string(line_no) + ": inconsistent objective count");
    }
    dataset.push_back(std::move(inst));
  }
  return dataset;
}

void write_jsonl(const PreferenceDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io_error, "cannot write " + path.string());
  for (const PreferenceInstance& inst : dataset) {
    nlohmann::ordered_json j;
    j["prompt"] = inst.prompt;
    if (inst.trainable()) {
      j["y_a"] = inst.y_a;
      j["y_b"] = inst.y_b;
    } else {
      j["y_a"] = inst.y_a_text;
      j["y_b"] = inst.y_b_text;
    }
    j["p"] = inst.p;
    out << j.dump() << '\n';
  }
}

}  // namespace moalab
