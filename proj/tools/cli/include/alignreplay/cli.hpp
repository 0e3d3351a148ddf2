#pragma once

// Command line front end. `run` is the whole program minus process setup, so
// tests drive it in-process with captured streams.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace alignreplay::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct CommandOutcome {
  int exit_code = kExitOk;
  std::string summary;
  std::optional<std::filesystem::path> manifest_path;
};

/// `args` excludes the program name.
CommandOutcome run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace alignreplay::cli
