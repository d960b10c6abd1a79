#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gmq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Runs one `gmq` command. `args` excludes the program name. Returns the
/// process exit code: 0 success, 2 usage or validation error, 3 runtime or
/// training error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmq::cli
