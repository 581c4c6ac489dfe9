#pragma once

namespace pjat {

/// Entry point of the `pjat` tool. Returns the process exit code
/// (0 ok, 1 usage, 2 data, 3 numeric).
int run_cli(int argc, const char* const* argv);

}  // namespace pjat
