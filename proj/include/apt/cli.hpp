#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace apt::cli {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Parses and runs one `apt` subcommand. Usage errors return 2 with a
/// diagnostic on `err`; module errors return 1.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace apt::cli
