#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace neurocap::cli {

// Exit codes: 0 success, 2 config/usage error, 3 data error, 4 backend error,
// 5 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitBackend = 4;
inline constexpr int kExitInternal = 5;

// Pipeline subcommands, in pipeline order, followed by "replay".
const std::vector<std::string>& subcommands();

// Closest subcommand by edit distance, or empty when nothing is close.
std::string suggest_subcommand(const std::string& name);

int exit_code_for(const std::exception& e);

// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neurocap::cli
