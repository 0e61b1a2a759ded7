#pragma once

namespace tacoforge {

// Parses argv and dispatches to a subcommand. Returns the process exit code:
// 0 on success, 1 on verification failures and unexpected errors, 2 on usage
// and input errors.
int run_cli(int argc, char** argv);

}  // namespace tacoforge
