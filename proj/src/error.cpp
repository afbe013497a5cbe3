#include "tokenprobe/error.hpp"

namespace tokenprobe {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_failure: return "io_failure";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::corrupt: return "corrupt";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::unknown_label: return "unknown_label";
    case ErrorCode::empty_concept: return "empty_concept";
    case ErrorCode::degenerate_input: return "degenerate_input";
    case ErrorCode::degenerate_direction: return "degenerate_direction";
    case ErrorCode::undefined_f1: return "undefined_f1";
    case ErrorCode::training_failure: return "training_failure";
    case ErrorCode::length_mismatch: return "length_mismatch";
    case ErrorCode::class_absent: return "class_absent";
    case ErrorCode::infeasible_trial: return "infeasible_trial";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::manifest_inconsistent: return "manifest_inconsistent";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& what) {
  throw ProbeError(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace tokenprobe
