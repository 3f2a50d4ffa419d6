#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qlab {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int partial = 2;
inline constexpr int infeasible = 3;
inline constexpr int corruption = 4;
inline constexpr int mismatch = 5;
inline constexpr int usage = 64;
} // namespace exit_code

// Runs the qlab command line; args excludes the program name.
int run_cli(const std::vector<std::string> & args, std::ostream & out, std::ostream & err);

} // namespace qlab
