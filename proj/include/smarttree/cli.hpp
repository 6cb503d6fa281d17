#pragma once

#include <string>
#include <vector>

namespace smarttree::cli {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kManifestSchema = "smarttree.manifest";
inline constexpr int kManifestVersion = 1;

/// Runs one subcommand; `args` excludes the program name. Returns 0 on
/// success, 1 when the command failed and 2 on a usage error. Diagnostics go
/// to stderr, data only to files under --out-dir.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

/// File name of the manifest a command writes into its output directory.
std::string manifest_name(const std::string& command);

}  // namespace smarttree::cli
