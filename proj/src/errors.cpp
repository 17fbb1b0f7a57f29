#include "msqferry/errors.hpp"

namespace msq {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonEquilateral: return "NonEquilateral";
    case ErrorCode::OverlappingFaces: return "OverlappingFaces";
    case ErrorCode::DanglingVertex: return "DanglingVertex";
    case ErrorCode::NotALeaf: return "NotALeaf";
    case ErrorCode::FaceNotFound: return "FaceNotFound";
    case ErrorCode::TargetTooSmall: return "TargetTooSmall";
    case ErrorCode::EmptyNetwork: return "EmptyNetwork";
    case ErrorCode::UnknownEdge: return "UnknownEdge";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::SameNode: return "SameNode";
    case ErrorCode::Unstable: return "Unstable";
    case ErrorCode::NoPositiveWeights: return "NoPositiveWeights";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::UnknownEntity: return "UnknownEntity";
    case ErrorCode::AlreadyFailed: return "AlreadyFailed";
    case ErrorCode::NotDivided: return "NotDivided";
    case ErrorCode::NoTrigger: return "NoTrigger";
    case ErrorCode::NotUnified: return "NotUnified";
    case ErrorCode::NodesStillInactive: return "NodesStillInactive";
    case ErrorCode::UnstableConfig: return "UnstableConfig";
    case ErrorCode::ScriptReferencesUnknownEntity: return "ScriptReferencesUnknownEntity";
    case ErrorCode::ScriptRequiresFerryMode: return "ScriptRequiresFerryMode";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "UnknownError";
}

bool Error::is_config_error() const noexcept {
  switch (code_) {
    // Bad inputs, bad references, violated preconditions, infeasible
    // configurations: the run was set up wrong.
    case ErrorCode::NonEquilateral:
    case ErrorCode::OverlappingFaces:
    case ErrorCode::DanglingVertex:
    case ErrorCode::NotALeaf:
    case ErrorCode::FaceNotFound:
    case ErrorCode::TargetTooSmall:
    case ErrorCode::EmptyNetwork:
    case ErrorCode::UnknownEdge:
    case ErrorCode::SameNode:
    case ErrorCode::Unstable:
    case ErrorCode::NoPositiveWeights:
    case ErrorCode::UnknownEntity:
    case ErrorCode::AlreadyFailed:
    case ErrorCode::NotDivided:
    case ErrorCode::NoTrigger:
    case ErrorCode::NotUnified:
    case ErrorCode::NodesStillInactive:
    case ErrorCode::UnstableConfig:
    case ErrorCode::ScriptReferencesUnknownEntity:
    case ErrorCode::ScriptRequiresFerryMode:
    case ErrorCode::BadFormat:
    case ErrorCode::IoError:
    case ErrorCode::InvalidArgument:
      return true;
    // Failures discovered while computing.
    case ErrorCode::Unreachable:
    case ErrorCode::NonConvergence:
      return false;
  }
  return false;
}

}  // namespace msq
