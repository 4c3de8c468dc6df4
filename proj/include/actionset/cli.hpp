#pragma once

#include <iosfwd>

namespace actionset {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitDivergence = 3,
};

/// Runs one subcommand. Errors go to `err` as a single line starting with
/// "actionset-error: <category>: ".
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace actionset
