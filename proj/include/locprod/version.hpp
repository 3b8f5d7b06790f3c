#pragma once

namespace locprod {

inline constexpr const char* kVersion = "0.1.0";

}
