#pragma once

namespace crib {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolName = "cribdet";

} // namespace crib
