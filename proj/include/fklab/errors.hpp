#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fklab {

enum class ErrorCode {
  NonFiniteState,
  InvalidGrid,
  NonFiniteIntegral,
  EmptyField,
  NonFiniteWeight,
  InterpolationOutOfRange,
  AllKilled,
  DegenerateESS,
  MaskCoverage,
  BandwidthTooSmall,
  IllConditioned,
  QuadratureFailure,
  KatoUnresolved,
  NonFinite,
  LinearSolveFailure,
  ConfigError,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

// Carried by NonFiniteState so callers can locate the offending sample.
class NonFiniteStateError : public Error {
 public:
  NonFiniteStateError(std::size_t path, std::size_t step);
  std::size_t path() const noexcept { return path_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t path_;
  std::size_t step_;
};

}  // namespace fklab
