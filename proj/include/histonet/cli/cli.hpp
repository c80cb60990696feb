#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace histonet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, bad values, ConfigError
  kData = 2,     // unreadable or malformed inputs, unwritable outputs
  kNumeric = 3,  // NaN loss, failed gradcheck
};

/// Runs one `histonet` command line (without the program name). Progress goes
/// to `out`, diagnostics and usage text to `err`. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace histonet::cli
