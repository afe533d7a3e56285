#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slicefinder {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  MalformedImage,
  SizeMismatch,
  IndexOutOfRange,
  AnisotropicSlice,
  AnisotropicVolume,
  EmptyOutput,
  DimsTooSmall,
  InvalidArgument,
  SingularTransform,
  DegenerateConfiguration,
  ZeroVariance,
  DimMismatch,
  NoOverlap,
  InsufficientContrast,
  LabelAbsentEverywhere,
  DegenerateX,
  TooManyLevels,
  NoValidBlocks,
  ExcessiveDeformation,
  AllPairsFailed,
  AllUndefined,
  PreprocessMismatch,
  EmptyCartography,
  IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` lets callers
// branch (skip a block, mark a pair undefined) without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace slicefinder
