#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "moalab/errors.hpp"

namespace moalab {

using PromptId = std::int32_t;
using TokenId = std::int32_t;

// Fixed-length token sequence; always exactly env.response_len long.
using Response = std::vector<TokenId>;

// Sample space of a tiny fixed-length categorical environment: responses are
// all length-L sequences over a V-token vocabulary, conditioned on a prompt id.
struct EnvSpec {
  int vocab_size = 2;
  int response_len = 1;
  std::vector<PromptId> prompts = {0};
  std::uint64_t seed = 0;
  std::int64_t enumeration_budget = 10'000'000;  // guard on V^L

  void validate() const;

  // V^L; throws EnumerationTooLarge when above the budget guard.
  std::int64_t num_sequences() const;

  // Number of prefix states per prompt: 1 + V + ... + V^(L-1).
  std::int64_t num_states() const;

  int prompt_index(PromptId prompt) const;  // PromptNotFound
  void check_response(const Response& y) const;

  bool operator==(const EnvSpec&) const = default;
};

// Index of a prefix (length < L) into the per-prompt state table. States are
// laid out level by level, lexicographic within a level.
std::int64_t state_index(const EnvSpec& env, std::span<const TokenId> prefix);

// Lexicographic rank of a full response in [0, V^L) and its inverse.
std::int64_t response_rank(const EnvSpec& env, const Response& y);
Response response_from_rank(const EnvSpec& env, std::int64_t rank);

// Yields all V^L responses exactly once in lexicographic order.
class ResponseEnumerator {
 public:
  explicit ResponseEnumerator(const EnvSpec& env);  // EnumerationTooLarge

  std::optional<Response> next();
  std::int64_t total() const { return total_; }

 private:
  EnvSpec env_;
  std::int64_t total_ = 0;
  std::int64_t produced_ = 0;
  Response current_;
};

std::vector<Response> enumerate_responses(const EnvSpec& env);

}  // namespace moalab
