#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace telecg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `telecg` binary. Reports go to `out`, diagnostics to stderr.
int run(int argc, const char* const* argv, std::ostream& out);
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace telecg::cli
