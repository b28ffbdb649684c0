#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "streetshop/error.hpp"

namespace streetshop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Exit code for a failure of the given kind: bad input is a usage error,
/// everything else a runtime error.
int exit_code(ErrorCode code);

/// Runs one command line (without the program name) and returns its exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace streetshop::cli
