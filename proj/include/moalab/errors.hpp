#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moalab {

// Every failure mode the library reports, one code per condition.
enum class Errc {
  prompt_not_found,
  prefix_too_long,
  token_out_of_range,
  invalid_temperature,
  enumeration_too_large,
  shape_mismatch,
  invalid_weight,
  invalid_reward_spec,
  tied_preference,
  empty_dataset,
  generation_stalled,
  insufficient_pool,
  parse_error,
  schema_error,
  degenerate_weight,
  divergence_detected,
  external_refiner_unavailable,
  degenerate_pair,
  empty_improvement_set,
  unknown_ablation,
  reference_violation,
  invalid_config,
  io_error,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Config-shaped failures map to CLI exit code 2, everything else to 3.
bool is_config_error(Errc code);

[[noreturn]] inline void raise(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace moalab
