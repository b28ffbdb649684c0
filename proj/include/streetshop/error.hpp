#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace streetshop {

enum class ErrorCode {
  kArgument,
  kShape,
  kNumeric,
  kDecode,
  kIo,
  kManifestFormat,
  kValidation,
  kStratification,
  kSampling,
  kFormat,
  kCheckpointMismatch,
  kQuery,
  kFingerprintMismatch,
  kNotFound,
  kPayloadTooLarge,
  kDiverged,
};

/// Stable machine-readable name, used in CLI diagnostics and HTTP error bodies.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Error(ErrorCode code, const std::string& message, std::vector<std::string> ids)
      : std::runtime_error(message), code_(code), ids_(std::move(ids)) {}

  ErrorCode code() const noexcept { return code_; }

  /// Record ids attached to validation failures (missing files, duplicates).
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  ErrorCode code_;
  std::vector<std::string> ids_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace streetshop
