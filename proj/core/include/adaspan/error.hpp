#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adaspan {

enum class ErrorCode {
  // tensor_core
  ShapeMismatch,
  DivisionByZero,
  EvenKernel,
  NonPositiveStride,
  DegenerateBatch,
  AllMaskedWithoutEpsilon,
  NonScalarLoss,
  StaleTape,
  NonDeterministicFunction,
  // adaptive_mask
  EmptySpanList,
  EvenExtent,
  ExtentTooSmall,
  // local_attention
  ExtentExceedsTable,
  ChannelMismatch,
  // model_zoo
  InvalidChannelPlan,
  NotAdaptiveModel,
  CheckpointFormat,
  // data_pipeline
  MissingFile,
  TruncatedRecord,
  LabelOutOfRange,
  FractionOutOfRange,
  // train_harness
  EpochOutOfRange,
  MissingGradient,
  NonFiniteLoss,
  // analysis
  MissingRun,
  // cli
  UnknownFlag,
  ConflictingFlags,
  ConfigMismatch,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace adaspan
