#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msq {

enum class ErrorCode {
  // geometry
  NonEquilateral,
  OverlappingFaces,
  DanglingVertex,
  NotALeaf,
  FaceNotFound,
  TargetTooSmall,
  // cycle plan
  EmptyNetwork,
  UnknownEdge,
  // routing
  Unreachable,
  SameNode,
  // queueing
  Unstable,
  NoPositiveWeights,
  NonConvergence,
  // simulation
  UnknownEntity,
  AlreadyFailed,
  NotDivided,
  NoTrigger,
  NotUnified,
  NodesStillInactive,
  UnstableConfig,
  ScriptReferencesUnknownEntity,
  ScriptRequiresFerryMode,
  // io / cli
  BadFormat,
  IoError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for all domain errors; tests and the CLI
/// dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for errors caused by bad inputs or configuration (CLI exit 2);
  /// everything else is a runtime failure (CLI exit 3).
  bool is_config_error() const noexcept;

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace msq
