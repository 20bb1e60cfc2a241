#pragma once

#include <iosfwd>

#include "adaspan/error.hpp"

namespace adaspan::cli {

// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Parses argv (argv[0] is the program name) and dispatches one of
/// train | eval | analyze | spans | gradcheck | export-plots.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Validation errors map to 1, everything else to 2.
int exit_code_for(ErrorCode code);

}  // namespace adaspan::cli
