#pragma once

namespace mvseg {

// Parses and dispatches the command line. Returns the process exit code:
// 0 on success, 1 on runtime failure, 2 on usage errors.
int run_cli(int argc, char** argv);

}  // namespace mvseg
