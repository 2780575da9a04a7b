// upit/cli.hpp
//
// Command line front end: subcommands mixgen, train, separate, oracle
// and evaluate over the library.  Options resolve in the order defaults
// < config file (--config, INI) < explicit flags, and every run writes
// the resolved configuration next to its outputs.

#pragma once

#include <string>
#include <vector>

namespace upit::cli {

/// Runs the tool; returns the process exit code.
int run(int argc, const char* const* argv);

/// Convenience overload for tests ("mixgen", "--corpus", ...).
int run(const std::vector<std::string>& args);

}  // namespace upit::cli
