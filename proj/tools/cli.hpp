#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cdlm::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Parses "0,2-4" into sorted unique positions.
std::vector<std::size_t> parse_positions(const std::string& text);

/// Runs the command line; never throws, returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdlm::cli
