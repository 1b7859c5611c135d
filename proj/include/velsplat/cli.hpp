#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace velsplat {

/// Runs one CLI invocation. `args` excludes the program name. Human-readable
/// output goes to `out`, usage and error messages to `err`; the return value
/// is the process exit status (0 on success).
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace velsplat
