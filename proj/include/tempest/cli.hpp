#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace tempest::cli {

// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `tempest` binary. args excludes the program name.
// Normal output goes to out; diagnostics (one line each) go to err.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tempest::cli
