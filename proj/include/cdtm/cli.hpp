#pragma once

// Command-line front end.
//
//   cdtm [--config FILE] [--set section.key=value ...] [--out DIR] <command> [flags]
//
// Commands: gen-terrain, gen-scenario, estimate, montecarlo, sweep, fov,
// show-config. The config file is read first, then --set entries, then the
// command's own flags, so later sources win.

#include <iosfwd>

namespace cdtm {

enum class ExitCode : int {
  Ok = 0,
  Failure = 1,  // runtime error not covered below, e.g. unwritable output
  Usage = 2,
  NotConverged = 3,
  Degenerate = 4,
  Rejected = 5,
};

/// Runs one invocation. Results and summaries go to `out`, diagnostics and
/// elapsed time to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cdtm
