#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bicoord::cli {

// Runs one command line (program name first). Failures are reported on `err`
// as {"error": {"code": ..., "message": ...}} with a nonzero return value.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bicoord::cli
