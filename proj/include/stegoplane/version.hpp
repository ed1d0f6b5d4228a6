#pragma once

namespace stegoplane {

inline constexpr const char * kVersion = "stegoplane 0.1.0";

} // namespace stegoplane
