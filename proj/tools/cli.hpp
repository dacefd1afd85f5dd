#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blocknas::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, runtime = 3 };

// Runs one command line (args exclude the program name) and returns the
// exit status. Results go to `out`, progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blocknas::cli
