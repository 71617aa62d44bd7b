#include <thread>

#include <httplib.h>

#include "toothloop/model_gateway.hpp"

namespace toothloop {

using nlohmann::json;

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw Error(ErrorCode::invalid_argument, "backend URL is empty");
  if (config_.max_attempts < 1) config_.max_attempts = 1;
}

json RemoteBackend::exchange(const std::string& method, const std::string& path,
                             const json* body) {
  httplib::Client client(config_.base_url);
  if (!client.is_valid()) {
    throw Error(ErrorCode::invalid_argument, "invalid backend URL '" + config_.base_url + "'");
  }
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Result res = method == "POST"
                              ? client.Post(path, body ? body->dump() : "{}", "application/json")
                              : client.Get(path);
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status >= 400) {
      throw Error(ErrorCode::protocol_error, "backend rejected " + method + " " + path +
                                                 " with HTTP " + std::to_string(res->status));
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error&) {
        throw Error(ErrorCode::protocol_error,
                    "invalid backend payload: body of " + path + " is not JSON");
      }
    }
    if (attempt < config_.max_attempts) std::this_thread::sleep_for(config_.retry_delay);
  }
  throw TransportError(method + " " + config_.base_url + path + " failed: " + last_error,
                       config_.max_attempts, config_.retry_delay);
}

std::vector<Prediction> RemoteBackend::segment(const PanoramicImage& image) {
  const json body{{"version", kWireVersion}, {"image", image_to_json(image)}};
  return predictions_from_wire(exchange("POST", "/v1/segment", &body));
}

std::string RemoteBackend::submit_training(std::uint32_t round, const json& document) {
  const json body{{"version", kWireVersion}, {"round", round}, {"document", document}};
  const json reply = exchange("POST", "/v1/train", &body);
  if (!reply.is_object() || !reply.contains("version") || reply["version"] != kWireVersion) {
    throw Error(ErrorCode::protocol_error, "invalid backend payload: version must be 1");
  }
  if (!reply.contains("job_id") || !reply["job_id"].is_string() ||
      reply["job_id"].get<std::string>().empty()) {
    throw Error(ErrorCode::protocol_error, "invalid backend payload: job_id must be a string");
  }
  return reply["job_id"].get<std::string>();
}

JobStatus RemoteBackend::poll_training(const std::string& job_id) {
  return job_status_from_wire(exchange("GET", "/v1/train/" + job_id, nullptr));
}

}  // namespace toothloop
