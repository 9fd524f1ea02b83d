#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmt {

// "0..9", "0,4,7", or a single number. Inclusive ranges.
std::vector<uint64_t> parse_seed_list(const std::string& text);

// Entry point behind the vmt binary. Returns the process exit code:
// 0 success, 1 error, 2 completed but degenerate.
int run_cli(int argc, char** argv);

}  // namespace vmt
