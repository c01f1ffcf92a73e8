#include <doctest.h>

#include <cmath>
#include <map>

#include "moalab/mod_decode.hpp"
#include "moalab/env.hpp"

using namespace moalab;

namespace {

EnvSpec env_of(int v, int l) {
  EnvSpec env;
  env.vocab_size = v;
  env.response_len = l;
  env.prompts = {0};
  return env;
}

std::vector<double> policy_next_probs(const TabularPolicy& p, PromptId prompt,
                                      std::span<const TokenId> prefix) {
  auto row = next_logits(p, prompt, prefix);
  std::vector<double> probs(row.size());
  softmax_into(row, probs);
  return probs;
}

}  // namespace

TEST_CASE("identical policies combine to the single policy's distribution") {
  const EnvSpec env = env_of(6, 3);
  Rng rng(101);
  const TabularPolicy p = TabularPolicy::random_init(env, 1.2, rng);
  const DecoderEnsemble ens = DecoderEnsemble::make({p, p}, WeightVector::make({0.3, 0.7}));
  for (const Response prefix : {Response{}, Response{2}, Response{5, 0}}) {
    const auto combined = mod_next_distribution(ens, 0, prefix);
    const auto single = policy_next_probs(p, 0, prefix);
    double total = 0.0;
    for (std::size_t i = 0; i < combined.size(); ++i) {
      CHECK(std::abs(combined[i] - single[i]) <= 1e-12);
      total += combined[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("simplex vertices reproduce the individual policies") {
  const EnvSpec env = env_of(5, 2);
  Rng rng(103);
  const TabularPolicy a = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy b = TabularPolicy::random_init(env, 1.0, rng);
  for (std::size_t vtx = 0; vtx < 2; ++vtx) {
    const DecoderEnsemble ens = DecoderEnsemble::make({a, b}, WeightVector::vertex(2, vtx));
    const auto combined = mod_next_distribution(ens, 0, Response{});
    const auto expect = policy_next_probs(vtx == 0 ? a : b, 0, Response{});
    for (std::size_t i = 0; i < combined.size(); ++i) {
      CHECK(std::abs(combined[i] - expect[i]) <= 1e-12);
    }
  }
}

TEST_CASE("symmetric geometric mean of mirrored binary policies is uniform") {
  const EnvSpec env = env_of(2, 1);
  TabularPolicy a = TabularPolicy::zeros(env);
  TabularPolicy b = TabularPolicy::zeros(env);
  const double delta = std::log(0.8 / 0.2);
  a.logits_row(0, 0)[0] = delta;  // (0.8, 0.2)
  b.logits_row(0, 0)[1] = delta;  // (0.2, 0.8)
  CHECK(policy_next_probs(a, 0, {})[0] == doctest::Approx(0.8).epsilon(1e-12));
  const DecoderEnsemble ens = DecoderEnsemble::make({a, b}, WeightVector::make({0.5, 0.5}));
  const auto combined = mod_next_distribution(ens, 0, Response{});
  CHECK(combined[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(combined[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("greedy ensemble generation matches single-policy greedy") {
  const EnvSpec env = env_of(6, 4);
  Rng rng(107);
  const TabularPolicy p = TabularPolicy::random_init(env, 1.0, rng);
  const DecoderEnsemble ens = DecoderEnsemble::make({p, p}, WeightVector::make({0.5, 0.5}));
  Rng s1(1);
  Rng s2(1);
  CHECK(mod_generate(ens, 0, 0.0, s1) == sample_response(p, 0, 0.0, s2));
}

TEST_CASE("ensemble sampling is deterministic per seed") {
  const EnvSpec env = env_of(4, 3);
  Rng rng(109);
  const TabularPolicy a = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy b = TabularPolicy::random_init(env, 1.0, rng);
  const DecoderEnsemble ens = DecoderEnsemble::make({a, b}, WeightVector::make({0.4, 0.6}));
  Rng s1(77);
  Rng s2(77);
  for (int i = 0; i < 20; ++i) CHECK(mod_generate(ens, 0, 1.0, s1) == mod_generate(ens, 0, 1.0, s2));
}

TEST_CASE("sequence-level sampling matches the per-token product chain") {
  const EnvSpec env = env_of(2, 2);
  Rng rng(113);
  const TabularPolicy a = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy b = TabularPolicy::random_init(env, 1.0, rng);
  const DecoderEnsemble ens = DecoderEnsemble::make({a, b}, WeightVector::make({0.5, 0.5}));

  // exact chain probabilities from the combined per-step distributions
  std::map<std::int64_t, double> exact;
  ResponseEnumerator it(env);
  while (auto y = it.next()) {
    double p = 1.0;
    for (int t = 0; t < env.response_len; ++t) {
      const std::span<const TokenId> prefix(y->data(), static_cast<std::size_t>(t));
      p *= mod_next_distribution(ens, 0, prefix)[static_cast<std::size_t>((*y)[t])];
    }
    exact[response_rank(env, *y)] = p;
  }

  Rng sampler(31);
  const int n = 100'000;
  std::map<std::int64_t, std::int64_t> counts;
  for (int i = 0; i < n; ++i) counts[response_rank(env, mod_generate(ens, 0, 1.0, sampler))]++;
  double tv = 0.0;
  for (const auto& [rank, p] : exact) {
    tv += 0.5 * std::abs(p - static_cast<double>(counts[rank]) / n);
  }
  CHECK(tv < 0.01);
}

TEST_CASE("reference subtraction is inert for simplex weights") {
  const EnvSpec env = env_of(5, 2);
  Rng rng(127);
  const TabularPolicy a = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy b = TabularPolicy::random_init(env, 1.0, rng);
  const TabularPolicy ref = TabularPolicy::random_init(env, 1.0, rng);
  DecoderEnsemble plain = DecoderEnsemble::make({a, b}, WeightVector::make({0.6, 0.4}));
  DecoderEnsemble subtracted = plain;
  subtracted.subtract_reference = true;
  subtracted.reference = ref;
  for (const Response prefix : {Response{}, Response{3}}) {
    const auto x = mod_next_distribution(plain, 0, prefix);
    const auto y = mod_next_distribution(subtracted, 0, prefix);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) <= 1e-12);
  }
}

TEST_CASE("ensemble construction validates shapes and weights") {
  const EnvSpec env = env_of(4, 2);
  const TabularPolicy a = TabularPolicy::zeros(env);
  const TabularPolicy other = TabularPolicy::zeros(env_of(4, 3));
  CHECK_THROWS_WITH_AS(DecoderEnsemble::make({a, other}, WeightVector::make({0.5, 0.5})),
                       doctest::Contains("ShapeMismatch"), Error);
  CHECK_THROWS_WITH_AS(DecoderEnsemble::make({a}, WeightVector::make({0.5, 0.5})),
                       doctest::Contains("ShapeMismatch"), Error);
}
