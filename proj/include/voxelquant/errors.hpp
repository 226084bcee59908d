// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace vq {

/// Structured error categories. Every failure the library raises carries one
/// of these codes so callers (CLI, bindings, tests) can dispatch without
/// string matching.
enum class ErrorCode {
    // model parsing / validation
    SyntaxError,
    UnknownOpKind,
    DuplicateTensorName,
    WeightOutOfBounds,
    CycleDetected,
    ShapeMismatch,
    DanglingInput,
    // calibration
    NonFiniteValue,
    EmptyObserver,
    EmptyDataset,
    InputShapeMismatch,
    QuantizedValueOutOfRange,
    MissingCalibration,
    // qdq / engine build
    PolicyUnsupportedKind,
    UnsupportedBits,
    MalformedQdqPattern,
    AccumulatorOverflow,
    // engine file
    BadMagic,
    UnsupportedVersion,
    TruncatedFile,
    ChecksumMismatch,
    // execution
    WorkspaceTooSmall,
    LabelOutOfRange,
    // harness
    InvalidConfig,
    MissingArtifact,
    IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace vq
