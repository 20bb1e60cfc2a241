#include "adaspan/error.hpp"

namespace adaspan {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::EvenKernel: return "EvenKernel";
    case ErrorCode::NonPositiveStride: return "NonPositiveStride";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::AllMaskedWithoutEpsilon: return "AllMaskedWithoutEpsilon";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::StaleTape: return "StaleTape";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::EmptySpanList: return "EmptySpanList";
    case ErrorCode::EvenExtent: return "EvenExtent";
    case ErrorCode::ExtentTooSmall: return "ExtentTooSmall";
    case ErrorCode::ExtentExceedsTable: return "ExtentExceedsTable";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::InvalidChannelPlan: return "InvalidChannelPlan";
    case ErrorCode::NotAdaptiveModel: return "NotAdaptiveModel";
    case ErrorCode::CheckpointFormat: return "CheckpointFormat";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::FractionOutOfRange: return "FractionOutOfRange";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingRun: return "MissingRun";
    case ErrorCode::UnknownFlag: return "UnknownFlag";
    case ErrorCode::ConflictingFlags: return "ConflictingFlags";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace adaspan
