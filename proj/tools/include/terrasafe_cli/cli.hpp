#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace terrasafe::cli {

// Process exit codes, one per failure class.
enum ExitCode : int {
  exit_ok = 0,
  exit_other = 1,
  exit_usage = 2,
  exit_config = 3,
  exit_io = 4,
  exit_format = 5,
  exit_data = 6,
  exit_retry_exhausted = 7,
  exit_invalid_argument = 8,
};

int run(int argc, char** argv, std::ostream& out, std::ostream& err);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace terrasafe::cli
