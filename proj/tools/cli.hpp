#pragma once

#include <string>
#include <vector>

namespace turbo::cli {

/// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
int run(std::vector<std::string> args);

}  // namespace turbo::cli
