#ifndef COUNTSPLIT_CLI_HPP
#define COUNTSPLIT_CLI_HPP

#include "countsplit/error.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace countsplit::cli {

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_io = 3, exit_numeric = 4 };

/**
 * Exit code for a library error: 2 for configuration problems, 3 for input/output, 4 for numerical failures.
 */
int exit_code_for(ErrorCode code);

/**
 * Run the command line with `args` (excluding the program name), writing messages to `out` and `err`.
 * Subcommands: `split`, `de`, `simulate`, `report`.
 */
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr int manifest_schema_version = 1;

}

#endif
