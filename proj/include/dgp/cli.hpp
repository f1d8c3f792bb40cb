#pragma once

namespace dgp {

/// Exit codes of the command line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2, kExitIo = 3 };

/// Entry point of dgp_compose. Results go to stdout, diagnostics to stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace dgp
