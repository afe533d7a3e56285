#pragma once

// Subcommands of the slicefinder tool: register, match, cartography,
// evaluate, tilt and phantom.

#include <atomic>
#include <ostream>

namespace slicefinder::cli {

// Parses the command line (plus an optional `--config` file and the
// SLICEFINDER_WORKERS environment variable) and runs one subcommand.
// Returns the process exit status.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

// Raised by the interrupt handler; a running cartography stops starting rows
// and flushes what it has, marked incomplete.
std::atomic<bool> &cancel_flag();

}  // namespace slicefinder::cli
