#pragma once

#include <iosfwd>

namespace opelab {

/// Entry point of the `opelab` tool. Returns 0 on success, 1 on invalid
/// arguments or configuration, 2 on runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace opelab
