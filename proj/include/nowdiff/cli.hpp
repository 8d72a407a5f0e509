#pragma once

namespace nowdiff::cli {

/// Entry point shared by the binary and the in-process tests.
/// Exit codes: 0 success, 1 usage/config error, 2 data or contract error.
int run(int argc, const char* const* argv);

}  // namespace nowdiff::cli
