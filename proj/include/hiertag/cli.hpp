// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: train, evaluate, project-labels, gen-synthetic.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or contract error.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace hiertag {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// `base` if it does not exist yet, otherwise the first free base-N (N >= 1).
std::filesystem::path fresh_directory(const std::filesystem::path& base);

// 64-bit FNV-1a over the file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace hiertag
