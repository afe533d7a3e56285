#include "slicefinder/error.hpp"

namespace slicefinder {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MalformedImage: return "MalformedImage";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::AnisotropicSlice: return "AnisotropicSlice";
    case ErrorCode::AnisotropicVolume: return "AnisotropicVolume";
    case ErrorCode::EmptyOutput: return "EmptyOutput";
    case ErrorCode::DimsTooSmall: return "DimsTooSmall";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SingularTransform: return "SingularTransform";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::InsufficientContrast: return "InsufficientContrast";
    case ErrorCode::LabelAbsentEverywhere: return "LabelAbsentEverywhere";
    case ErrorCode::DegenerateX: return "DegenerateX";
    case ErrorCode::TooManyLevels: return "TooManyLevels";
    case ErrorCode::NoValidBlocks: return "NoValidBlocks";
    case ErrorCode::ExcessiveDeformation: return "ExcessiveDeformation";
    case ErrorCode::AllPairsFailed: return "AllPairsFailed";
    case ErrorCode::AllUndefined: return "AllUndefined";
    case ErrorCode::PreprocessMismatch: return "PreprocessMismatch";
    case ErrorCode::EmptyCartography: return "EmptyCartography";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace slicefinder
