#ifndef UDIFFSE_TOOLS_COMMANDS_HPP
#define UDIFFSE_TOOLS_COMMANDS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace udiffse::cli {

// Process exit codes, one per error class.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kBadConfig = 2,
  kUnreadableInput = 3,
  kMismatch = 4,
  kDiverged = 5,
};

class CliError : public std::runtime_error {
 public:
  CliError(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// Splices `--config FILE` into argv: every `key = value` line before a
// [metrics] section becomes `--key=value`, inserted ahead of the user's own
// flags so those win. argv[1] must be the subcommand.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

int run(int argc, char** argv);

}  // namespace udiffse::cli

#endif  // UDIFFSE_TOOLS_COMMANDS_HPP
