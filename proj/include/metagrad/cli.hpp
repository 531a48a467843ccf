#pragma once

namespace metagrad {

// Entry point behind the command-line tool. Exit codes: 0 success,
// 1 configuration/usage error, 2 divergence of all replicates.
int cli_main(int argc, const char* const* argv);

}  // namespace metagrad
