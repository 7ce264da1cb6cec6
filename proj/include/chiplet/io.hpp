#pragma once

#include <string>

namespace chiplet {

// Shortest round-trip decimal representation; identical on every platform
// with a conforming std::to_chars.
std::string format_double(double v);

}  // namespace chiplet
