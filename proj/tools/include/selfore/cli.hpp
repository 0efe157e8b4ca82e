#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace selfore::cli {

/// Runs one command line (without the program name). Returns the process
/// exit code: 0 success, 1 usage, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace selfore::cli
