#pragma once

namespace bnet {

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 runtime
// error. Diagnostics go to stderr, data artifacts to files or stdout.
int cli_main(int argc, const char* const* argv);

}  // namespace bnet
