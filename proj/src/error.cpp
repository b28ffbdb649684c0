#include "streetshop/error.hpp"

namespace streetshop {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument: return "argument";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kManifestFormat: return "manifest_format";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kStratification: return "stratification";
    case ErrorCode::kSampling: return "sampling";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kCheckpointMismatch: return "checkpoint_mismatch";
    case ErrorCode::kQuery: return "query";
    case ErrorCode::kFingerprintMismatch: return "fingerprint_mismatch";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kPayloadTooLarge: return "payload_too_large";
    case ErrorCode::kDiverged: return "diverged";
  }
  return "unknown";
}

}  // namespace streetshop
