#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spinealign::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;  // bad flags or malformed/invalid configuration

// The spinealign command line. `args` excludes the program name. Results go
// to `out`, logs and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spinealign::app
