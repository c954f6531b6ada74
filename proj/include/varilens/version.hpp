#pragma once

namespace varilens {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace varilens
