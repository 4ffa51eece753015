#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace chemtown::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitPartial = 4;

inline constexpr std::string_view kVersion = "0.1.0";

/// Entry point shared by the binary and the in-process tests. `args` excludes
/// the program name.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

} // namespace chemtown::cli
