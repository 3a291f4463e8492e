#pragma once

#include <string>

namespace nodpred {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace nodpred
