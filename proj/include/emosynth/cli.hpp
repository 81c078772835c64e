#ifndef EMOSYNTH_CLI_HPP
#define EMOSYNTH_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace emosynth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingCheckpoint = 3;

/// Runs one subcommand. `args` excludes the program name. Artifacts go to
/// `--out` or to `<runs>/<config hash>-<UTC timestamp>`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emosynth::cli

#endif  // EMOSYNTH_CLI_HPP
