#pragma once

#include <iosfwd>

namespace ehrisk {

/// Exit codes of the `ehrisk` tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Runs one `ehrisk` command line. Summaries go to `out`, diagnostics to `err`.
int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace ehrisk
