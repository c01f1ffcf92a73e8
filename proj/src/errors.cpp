#include "moalab/errors.hpp"

namespace moalab {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::prompt_not_found: return "PromptNotFound";
    case Errc::prefix_too_long: return "PrefixTooLong";
    case Errc::token_out_of_range: return "TokenOutOfRange";
    case Errc::invalid_temperature: return "InvalidTemperature";
    case Errc::enumeration_too_large: return "EnumerationTooLarge";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::invalid_weight: return "InvalidWeight";
    case Errc::invalid_reward_spec: return "InvalidRewardSpec";
    case Errc::tied_preference: return "TiedPreference";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::generation_stalled: return "GenerationStalled";
    case Errc::insufficient_pool: return "InsufficientPool";
    case Errc::parse_error: return "ParseError";
    case Errc::schema_error: return "SchemaError";
    case Errc::degenerate_weight: return "DegenerateWeight";
    case Errc::divergence_detected: return "DivergenceDetected";
    case Errc::external_refiner_unavailable: return "ExternalRefinerUnavailable";
    case Errc::degenerate_pair: return "DegeneratePair";
    case Errc::empty_improvement_set: return "EmptyImprovementSet";
    case Errc::unknown_ablation: return "UnknownAblation";
    case Errc::reference_violation: return "ReferenceViolation";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

bool is_config_error(Errc code) {
  switch (code) {
    case Errc::invalid_config:
    case Errc::parse_error:
    case Errc::schema_error:
    case Errc::unknown_ablation:
    case Errc::invalid_weight:
    case Errc::invalid_reward_spec:
      return true;
    default:
      return false;
  }
}

}  // namespace moalab
