#pragma once

namespace warpbench {

inline constexpr const char* kEngineVersion = "0.1.0";

}  // namespace warpbench
