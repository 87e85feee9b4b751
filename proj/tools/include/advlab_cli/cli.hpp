#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace advlab::cli {

/// Exit codes: 0 success, 1 runtime failure (including a failed gradcheck),
/// 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace advlab::cli
