#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace labelembed {

/// Process exit codes of the labelembed tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,  // I/O and other unexpected failures
  kExitValidation = 2,
  kExitDiverged = 3,
  kExitGradcheck = 4,
};

/// Runs one command line (args[0] is the program name) and returns its exit
/// code. Normal output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace labelembed
