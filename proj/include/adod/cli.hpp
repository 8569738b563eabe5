#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adod {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

// One invocation of the `adod` tool; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// The eight ablation rows in table order: name and (residual, attention,
// domain) toggles.
struct AblationRow {
  std::string name;
  bool use_residual = false;
  bool use_channel_attention = false;
  bool use_domain = false;
};
const std::vector<AblationRow>& ablation_rows();

}  // namespace adod
