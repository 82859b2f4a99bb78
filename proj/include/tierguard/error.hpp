// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tierguard {

enum class ErrorCode {
  kNotFound,
  kDuplicateId,
  kInvalidRegistry,
  kPolicyInvalid,
  kTransportError,
  kMalformedResponse,
  kScriptExhausted,
  kEmptyDistribution,
  kUnmappedFirstToken,
  kMissingExplanationTags,
  kConfigParseError,
  kConfigInvalid,
  kMalformedLine,
  kInvalidSample,
  kTeacherParseError,
  kVerifierParseError,
  kLengthMismatch,
  kInvalidDistribution,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Base for every error raised by the library. The code is stable and is
/// what callers (gateway, CLI, bindings) switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tierguard
