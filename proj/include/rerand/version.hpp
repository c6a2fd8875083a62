#pragma once

namespace rerand {

inline constexpr const char* kVersion = "0.3.0";

}  // namespace rerand
