#include "fklab/errors.hpp"

namespace fklab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::InvalidGrid: return "InvalidGrid";
    case ErrorCode::NonFiniteIntegral: return "NonFiniteIntegral";
    case ErrorCode::EmptyField: return "EmptyField";
    case ErrorCode::NonFiniteWeight: return "NonFiniteWeight";
    case ErrorCode::InterpolationOutOfRange: return "InterpolationOutOfRange";
    case ErrorCode::AllKilled: return "AllKilled";
    case ErrorCode::DegenerateESS: return "DegenerateESS";
    case ErrorCode::MaskCoverage: return "MaskCoverage";
    case ErrorCode::BandwidthTooSmall: return "BandwidthTooSmall";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::KatoUnresolved: return "KatoUnresolved";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::LinearSolveFailure: return "LinearSolveFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

NonFiniteStateError::NonFiniteStateError(std::size_t path, std::size_t step)
    : Error(ErrorCode::NonFiniteState,
            "path " + std::to_string(path) + " became non-finite at step " + std::to_string(step)),
      path_(path),
      step_(step) {}

}  // namespace fklab
