#pragma once

namespace histokt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace histokt
