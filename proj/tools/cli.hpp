// Command-line front end for corpus generation, training, evaluation and
// gradient checks.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace casr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace casr::cli
