#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace npde::app {

/// Runs one command line (without the program name) and returns the exit
/// code: 0 success, 2 invalid configuration, 3 I/O failure, 4 numerical abort.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace npde::app
