#pragma once

namespace nconv::cli {

/// Subcommands: synth, train, infer, eval, gradcheck, dump-filters.
/// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run(int argc, const char* const* argv);

}  // namespace nconv::cli
