#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sstl::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericalError = 4,
};

// Parses `args` (without the program name) and runs one subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sstl::cli
