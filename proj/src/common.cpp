#include "magsplat/common.hpp"

namespace magsplat {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonPositiveScale: return "NonPositiveScale";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::EmptyControlSet: return "EmptyControlSet";
    case ErrorKind::ZeroBlend: return "ZeroBlend";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorKind::NoConsensus: return "NoConsensus";
    case ErrorKind::SingularNormalMatrix: return "SingularNormalMatrix";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::EmptyInitialization: return "EmptyInitialization";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::ConfigHashMismatch: return "ConfigHashMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::ConfigHashMismatch:
    case ErrorKind::InvalidArgument:
      return 2;
    case ErrorKind::BadMagic:
    case ErrorKind::TruncatedPayload:
    case ErrorKind::IoError:
    case ErrorKind::LengthMismatch:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::EmptyInitialization:
    case ErrorKind::InsufficientCorrespondences:
      return 3;
    default:
      return 4;
  }
}

}  // namespace magsplat
