#include "toothloop/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

extern char** environ;

namespace toothloop {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool known_key(std::string_view key) {
  return std::find(kConfigKeys.begin(), kConfigKeys.end(), key) != kConfigKeys.end();
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw Error(ErrorCode::invalid_argument,
              "config key '" + key + "': '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return v;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
  Int v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "an integer");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

}  // namespace

ConfigMap parse_config(std::string_view text) {
  ConfigMap out;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse_error,
                  "config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    if (!known_key(key)) {
      throw Error(ErrorCode::parse_error,
                  "config line " + std::to_string(number) + ": unknown key '" + key + "'");
    }
    out[key] = trim(std::string_view(content).substr(eq + 1));
  }
  return out;
}

void apply_env(ConfigMap& config, const std::vector<std::string>& environment) {
  for (const std::string& entry : environment) {
    if (!entry.starts_with(kEnvPrefix)) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(kEnvPrefix.size(), eq - kEnvPrefix.size());
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (known_key(key)) config[key] = entry.substr(eq + 1);
  }
}

std::vector<std::string> current_environment() {
  std::vector<std::string> out;
  for (char** e = environ; e && *e; ++e) out.emplace_back(*e);
  return out;
}

WorkspaceConfig workspace_config(const ConfigMap& config) {
  WorkspaceConfig c;
  for (const auto& [key, value] : config) {
    if (key == "data_dir") {
      c.data_dir = value;
    } else if (key == "backend") {
      c.backend = value;
    } else if (key == "backend_timeout_ms") {
      c.backend_timeout = std::chrono::milliseconds(to_int<long>(key, value));
    } else if (key == "mock_seed") {
      c.mock.seed = to_int<std::uint64_t>(key, value);
    } else if (key == "mock_iou_initial") {
      c.mock.iou_initial = to_double(key, value);
    } else if (key == "mock_iou_final") {
      c.mock.iou_final = to_double(key, value);
    } else if (key == "mock_lambda") {
      c.mock.lambda = to_double(key, value);
    } else if (key == "mock_mislabel_rate") {
      c.mock.mislabel_rate = to_double(key, value);
    } else if (key == "template") {
      c.arrangement.sequence.clear();
      std::istringstream in(value);
      std::string item;
      while (std::getline(in, item, ',')) {
        auto cls = map_class_name(trim(item));
        if (!cls) bad_value(key, trim(item), "a tooth class");
        c.arrangement.sequence.push_back(*cls);
      }
    } else if (key == "tau") {
      c.arrangement.tau = to_double(key, value);
    } else if (key == "relabel") {
      c.relabel = to_bool(key, value);
    } else if (key == "z") {
      c.z_threshold = to_double(key, value);
    } else if (key == "epsilon") {
      c.epsilon = to_double(key, value);
    }
  }
  try {
    c.arrangement.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_argument, std::string("config: ") + e.what());
  }
  if (!(c.z_threshold > 0)) bad_value("z", config.at("z"), "positive");
  return c;
}

int config_port(const ConfigMap& config, int fallback) {
  auto it = config.find("port");
  if (it == config.end()) return fallback;
  const int port = to_int<int>("port", it->second);
  if (port < 0 || port > 65535) bad_value("port", it->second, "a port number");
  return port;
}

}  // namespace toothloop
