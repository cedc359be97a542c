#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msg::cli {

// Exit codes, one per error category.
enum Exit : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kNumeric = 5,
  kModel = 6,  // shape, degenerate-group and other library errors
};

// args excludes the program name. Normal output goes to out, diagnostics and
// the resolved config echo to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Relative paths are taken under $MSG_DATA_ROOT when it is set.
std::string resolve_path(const std::string& path);

}  // namespace msg::cli
