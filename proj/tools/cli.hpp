#pragma once

#include <string>
#include <vector>

namespace conefield {

/// Runs the command-line interface; returns the process exit status.
int run_cli(const std::vector<std::string>& args);

}  // namespace conefield
