#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace urbansense::app {

/// Entry point of the `urbansense` binary. args[0] is the program name. Returns the process
/// exit code: 0 success, 1 internal failure, 2-7 per urbansense::exit_code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace urbansense::app
