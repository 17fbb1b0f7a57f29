#pragma once

#include <string_view>

namespace msq {

inline constexpr std::string_view kToolName = "msqferry";
inline constexpr std::string_view kVersion = "0.1.0";
/// Schema version stamped into every serialized document.
inline constexpr int kSchemaVersion = 1;

}  // namespace msq
