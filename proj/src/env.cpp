#include "moalab/env.hpp"

#include <algorithm>
#include <string>
#include <unordered_set>

namespace moalab {

namespace {

// V^L without overflow; anything past the cap is reported as the cap + 1.
std::int64_t pow_capped(std::int64_t base, int exp, std::int64_t cap) {
  std::int64_t value = 1;
  for (int i = 0; i < exp; ++i) {
    if (value > cap / base) return cap + 1;
    value *= base;
  }
  return value;
}

}  // namespace

void EnvSpec::validate() const {
  if (vocab_size < 2) raise(Errc::invalid_config, "vocab_size must be >= 2");
  if (response_len < 1) raise(Errc::invalid_config, "response_len must be >= 1");
  if (prompts.empty()) raise(Errc::invalid_config, "at least one prompt required");
  std::unordered_set<PromptId> seen(prompts.begin(), prompts.end());
  if (seen.size() != prompts.size()) raise(Errc::invalid_config, "duplicate prompt ids");
  if (enumeration_budget < 2) raise(Errc::invalid_config, "enumeration budget too small");
}

std::int64_t EnvSpec::num_sequences() const {
  const std::int64_t n = pow_capped(vocab_size, response_len, enumeration_budget);
  if (n > enumeration_budget) {
    raise(Errc::enumeration_too_large,
          "V^L exceeds budget " + std::to_string(enumeration_budget) + " (V=" +
              std::to_string(vocab_size) + ", L=" + std::to_string(response_len) + ")");
  }
  return n;
}

std::int64_t EnvSpec::num_states() const {
  return (num_sequences() - 1) / (vocab_size - 1);
}

int EnvSpec::prompt_index(PromptId prompt) const {
  auto it = std::find(prompts.begin(), prompts.end(), prompt);
  if (it == prompts.end()) {
    raise(Errc::prompt_not_found, "prompt " + std::to_string(prompt) + " not in env");
  }
  return static_cast<int>(it - prompts.begin());
}

void EnvSpec::check_response(const Response& y) const {
  if (static_cast<int>(y.size()) != response_len) {
    raise(Errc::token_out_of_range,
          "response length " + std::to_string(y.size()) + " != " + std::to_string(response_len));
  }
  for (TokenId tok : y) {
    if (tok < 0 || tok >= vocab_size) {
      raise(Errc::token_out_of_range, "token " + std::to_string(tok) + " outside vocab");
    }
  }
}

std::int64_t state_index(const EnvSpec& env, std::span<const TokenId> prefix) {
  if (static_cast<int>(prefix.size()) >= env.response_len) {
    raise(Errc::prefix_too_long, "prefix length " + std::to_string(prefix.size()) +
                                     " has no next-token state (L=" +
                                     std::to_string(env.response_len) + ")");
  }
  std::int64_t offset = 0;  // (V^t - 1)/(V - 1), built incrementally
  std::int64_t within = 0;
  for (TokenId tok : prefix) {
    if (tok < 0 || tok >= env.vocab_size) {
      raise(Errc::token_out_of_range, "token " + std::to_string(tok) + " outside vocab");
    }
    offset = offset * env.vocab_size + 1;
    within = within * env.vocab_size + tok;
  }
  return offset + within;
}

std::int64_t response_rank(const EnvSpec& env, const Response& y) {
  env.check_response(y);
  std::int64_t rank = 0;
  for (TokenId tok : y) rank = rank * env.vocab_size + tok;
  return rank;
}

Response response_from_rank(const EnvSpec& env, std::int64_t rank) {
  Response y(env.response_len);
  for (int t = env.response_len - 1; t >= 0; --t) {
    y[t] = static_cast<TokenId>(rank % env.vocab_size);
    rank /= env.vocab_size;
  }
  return y;
}

ResponseEnumerator::ResponseEnumerator(const EnvSpec& env) : env_(env) {
  env_.validate();
  total_ = env_.num_sequences();  // throws EnumerationTooLarge past the budget
  current_.assign(env_.response_len, 0);
}

std::optional<Response> ResponseEnumerator::next() {
  if (produced_ >= total_) return std::nullopt;
  Response out = current_;
  ++produced_;
  for (int t = env_.response_len - 1; t >= 0; --t) {
    if (++current_[t] < env_.vocab_size) break;
    current_[t] = 0;
  }
  return out;
}

std::vector<Response> enumerate_responses(const EnvSpec& env) {
  ResponseEnumerator it(env);
  std::vector<Response> all;
  all.reserve(static_cast<std::size_t>(it.total()));
  while (auto y = it.next()) all.push_back(std::move(*y));
  return all;
}

}  // namespace moalab
