#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spof {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCapacity = 3;
inline constexpr int kExitIo = 4;

/// Entry point of the `spof` command; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace spof
