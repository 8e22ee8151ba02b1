#pragma once

namespace qbc {

inline constexpr const char* kVersion = "0.1.0";

} // namespace qbc
