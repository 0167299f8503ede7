#pragma once

namespace bap::cli {

/// Parses arguments and runs one subcommand. Returns the process exit code:
/// 0 on success, 1 on any error (after printing a message to stderr).
int run(int argc, char** argv);

}  // namespace bap::cli
