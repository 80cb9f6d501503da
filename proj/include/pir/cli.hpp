#pragma once

// pirctl: flow gen|info, pir train|eval, rl train|eval, report curve|render.
// Every command reads a JSON run config, applies --set overrides, echoes the
// resolved config to <outdir>/resolved.json and writes only under <outdir>.

#include "pir/checkpoint.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace pir::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Every key a run config may contain, at its default value.
Json default_run_config();

/// Dotted-path override; the value is parsed as JSON and falls back to a string.
void apply_override(Json& config, const std::string& assignment);

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace pir::cli
