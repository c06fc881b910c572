#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace occlunet::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingInput = 3,
  kCorruptInput = 4,
  kDiverged = 5,
};

/// Runs one `occlunet` command. `args` excludes the program name. Errors are
/// reported on `err` as one `error code=<n> kind=<kind> message="..."` line.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace occlunet::cli
