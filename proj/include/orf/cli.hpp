#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace orf::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kCertificationFailure = 3,
    kSamplerAbort = 4,
    kIoError = 5,
};

// Entry point of the `orf` tool. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Rewrites `--config FILE` into flags placed before the command-line flags,
// so explicit flags take precedence. Keys use option names without the
// leading dashes; '_' and '-' are interchangeable.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace orf::cli
