#pragma once

#include <string>

#include "cafenet/error.hpp"

namespace cafenet::cli {

/// Process exit code for an error category (0 is success, 1 unexpected failure).
int exit_code(ErrorKind kind);

/// Entry point of the `cafenet` executable.
int run_cli(int argc, char** argv);

} // namespace cafenet::cli
