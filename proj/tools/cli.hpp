#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace dukf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand. `args` excludes the program name; `env` supplies
// DUKF__SECTION__KEY overrides.
int dispatch(const std::vector<std::string>& args,
             const std::map<std::string, std::string>& env, std::ostream& out,
             std::ostream& err);

}  // namespace dukf::cli
