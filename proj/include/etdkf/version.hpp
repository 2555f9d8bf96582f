#pragma once

namespace etdkf {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace etdkf
