#pragma once

// Command-line front end: gen-data, train, ablate, sweep, diagnose.
//
// Exit codes: 0 success, 2 usage or input error, 3 numeric divergence.

#include <ostream>

namespace cdgpa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

/// Runs one command. Messages go to `out`, errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cdgpa
