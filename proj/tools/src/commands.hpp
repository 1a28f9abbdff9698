#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace deepdgl::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kDivergence = 3 };

// Runs one `deepdgl` invocation; `args` excludes the program name.
// DEEPDGL_SEED is read from `env_seed` when it is non-null.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const char* env_seed = nullptr);

}  // namespace deepdgl::cli
