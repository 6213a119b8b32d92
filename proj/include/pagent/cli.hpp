#pragma once

namespace pagent::cli {

// Entry point behind the pagent binary. Exit codes: 0 success, 1 usage
// error, 2 runtime error.
int cli_main(int argc, const char* const* argv);

} // namespace pagent::cli
