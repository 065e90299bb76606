#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace padrec::cli {

/// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime or
/// data error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace padrec::cli
