#pragma once

#include <stdexcept>
#include <string>

namespace tokenprobe {

enum class ErrorCode {
  io_failure,
  bad_magic,
  unsupported_version,
  truncated,
  corrupt,
  dimension_mismatch,
  unknown_label,
  empty_concept,
  degenerate_input,
  degenerate_direction,
  undefined_f1,
  training_failure,
  length_mismatch,
  class_absent,
  infeasible_trial,
  shape_mismatch,
  config_error,
  manifest_inconsistent,
};

const char* to_string(ErrorCode code);

class ProbeError : public std::runtime_error {
 public:
  ProbeError(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace tokenprobe
