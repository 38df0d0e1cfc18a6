#pragma once

namespace sigprop {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sigprop
