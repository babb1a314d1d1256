#pragma once

// Command-line front end. Subcommands: generate, train, eval, sample, fit,
// export-mesh. `flowpose <subcommand> --help` lists each one's flags.

#include <string>
#include <vector>

namespace flowpose {

/// Runs one command line (args[0] is the program name). Returns the process
/// exit code; failures print a single "flowpose: error: ..." line to stderr.
/// Log verbosity comes from FLOWPOSE_LOG (trace, debug, info, warn, error, off).
int run(const std::vector<std::string>& args);

}  // namespace flowpose
