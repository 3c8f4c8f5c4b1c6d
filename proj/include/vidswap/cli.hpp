#pragma once

namespace vidswap {

/// Entry point of the `vidswap` tool. Exit status: 0 success, 1 module
/// error, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace vidswap
