// Copyright 2026 The vfd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vfd {

/// Failure categories shared by the C++ core and the C API (see vfd.h).
enum class ErrorCode : int {
  kIo = 1,
  kFormat = 2,
  kArgument = 3,
  kParse = 4,
  kValidation = 5,
  kConfig = 6,
  kShape = 7,
  kDegenerate = 8,
  kEvaluation = 9,
  kInternal = 10,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vfd
