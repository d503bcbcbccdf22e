#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace confound_em {

/// Process exit codes of the confound_em tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUnexpected = 1,
  kExitConfig = 2,
  kExitHarness = 3,
  kExitValidation = 4,
  kExitNotConverged = 5,
  kExitBootstrapUnstable = 6,
  kExitTolerance = 7,
};

/// Runs one command line (without the program name). Data goes to `out`, logs to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace confound_em
