#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oracle_uq {

enum class ErrorCode {
  kBackendUnavailable,
  kContextTooLong,
  kTokenOutOfVocabulary,
  kLabelTokenizesToEmpty,
  kSpanNotCovered,
  kEmptyInput,
  kSingleClass,
  kTooFewWords,
  kNonConvergence,
  kUnknownItem,
  kInvalidArgument,
  kMetricUndefined,
  kMissingGrid,
  kLedgerCorrupt,
  kWireError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace oracle_uq
