#pragma once

#include <string>
#include <vector>

namespace igpn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Subcommands: synth, train, eval, flops, gradcheck, fuse, export-topology,
/// dump-attention. `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace igpn::cli
