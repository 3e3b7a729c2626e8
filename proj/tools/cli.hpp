#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace disagg::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

/// Runs one `disagg` invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace disagg::cli
