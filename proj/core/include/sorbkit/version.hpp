#pragma once

namespace sorbkit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sorbkit
