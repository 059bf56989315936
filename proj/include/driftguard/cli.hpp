#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace driftguard {

// Runs `driftguard <subcommand> [flags]` with `args` excluding the program
// name. Reports go to `out`, error JSON to `err`. Returns the exit code:
// 0 success, 2 user or input error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace driftguard
