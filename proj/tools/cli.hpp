#pragma once

// Command-line front end: project, gradcheck, train, eval, baseline, curves.

#include <cstdint>
#include <string>
#include <vector>

namespace alloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;      ///< parse or precondition failure
inline constexpr int kExitThreshold = 3;  ///< a checked threshold was missed
inline constexpr int kExitInternal = 4;   ///< internal assertion

/// Runs one command; args exclude the program name. Never throws.
int run(const std::vector<std::string>& args);

/// Seed lists: "a..b" (inclusive) or "s1,s2,...".
std::vector<std::uint64_t> parse_seeds(const std::string& text);

}  // namespace alloc::cli
