#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace emscope {

/// Flat `key = value` run configuration. Keys are the long flag names with
/// dashes replaced by underscores; a flag given on the command line wins.
struct RunConfig {
  std::map<std::string, std::string> values;

  static RunConfig parse(std::istream& in, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);
};

/// Runs one `emscope` command. `args` excludes the program name. Returns 0 on
/// success, 1 on usage errors and 2 on data errors; diagnostics go to `err`
/// and the one-line summary to `out`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(const std::vector<std::string>& args);

}  // namespace emscope
