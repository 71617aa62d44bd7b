#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "toothloop/workspace.hpp"

namespace toothloop {

/// Recognized keys, in documentation order.
inline constexpr std::array<std::string_view, 14> kConfigKeys{
    "data_dir",   "backend",         "backend_timeout_ms", "mock_seed",
    "mock_iou_initial", "mock_iou_final", "mock_lambda",   "mock_mislabel_rate",
    "template",   "tau",             "relabel",            "z",
    "epsilon",    "port"};

inline constexpr std::string_view kEnvPrefix = "TOOTHLOOP_";

using ConfigMap = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment. Unknown keys and malformed
/// lines throw Error{parse_error} naming the line.
ConfigMap parse_config(std::string_view text);

/// Overrides from TOOTHLOOP_<KEY> variables (key upper-cased), taken from
/// a `NAME=value` list such as `environ`.
void apply_env(ConfigMap& config, const std::vector<std::string>& environment);

std::vector<std::string> current_environment();

/// Throws Error{invalid_argument} naming the key on a bad value.
WorkspaceConfig workspace_config(const ConfigMap& config);

int config_port(const ConfigMap& config, int fallback);

}  // namespace toothloop
