#pragma once

#include <iostream>
#include <string>

namespace nodpred {

inline constexpr const char* kVersion = "1.0.0";

/// Entry point of the `nodpred` tool. Returns 0 on success, 1 on validation
/// errors (bad flags, config, or input), 2 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace nodpred
