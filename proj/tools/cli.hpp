#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hsicl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

/// Runs one command line (argv[0] is the program name). Normal output goes
/// to `out`; diagnostics and usage text to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsicl::cli
