#include "toothloop/server.hpp"

#include <charconv>

#include <httplib.h>

namespace toothloop {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return 422;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::degenerate: return 422;
    case ErrorCode::parse_error: return 400;
    case ErrorCode::protocol_error: return 502;
    case ErrorCode::transport_error: return 503;
    case ErrorCode::io_error: return 500;
  }
  return 500;
}

json error_body(const Error& error) {
  json details = json::object();
  if (const auto* d = dynamic_cast<const DetailedError*>(&error)) {
    details = d->details();
  } else if (const auto* t = dynamic_cast<const TransportError*>(&error)) {
    details = {{"attempts", t->attempts()}, {"retry_after_ms", t->retry_after().count()}};
  }
  return {{"code", to_string(error.code())}, {"message", error.what()}, {"details", details}};
}

namespace {

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send(res, http_status(e.code()), error_body(e));
    } catch (const json::exception& e) {
      send(res, 422,
           {{"code", "invalid_argument"}, {"message", e.what()}, {"details", json::object()}});
    } catch (const std::exception& e) {
      send(res, 500, {{"code", "internal"}, {"message", e.what()}, {"details", json::object()}});
    }
  };
}

std::uint64_t path_id(const httplib::Request& req, std::size_t group = 1) {
  const std::string s = req.matches[static_cast<int>(group)];
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::not_found, "id '" + s + "' is out of range");
  }
  return v;
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = parse_json(req.body);
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be an object");
  return j;
}

}  // namespace

ApiServer::ApiServer(Workspace& workspace)
    : workspace_(workspace), server_(std::make_unique<httplib::Server>()) {
  // No SO_REUSEPORT: a second server on a busy port must fail to bind.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  routes();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::routes() {
  auto& s = *server_;
  Workspace& ws = workspace_;

  s.Get("/api/session", guarded([&ws](const auto&, auto& res) { send(res, 200, ws.session()); }));
  s.Get("/api/images",
        guarded([&ws](const auto&, auto& res) { send(res, 200, ws.list_images()); }));
  s.Get(R"(/api/images/(\d+))", guarded([&ws](const auto& req, auto& res) {
          send(res, 200, ws.get_image(path_id(req)));
        }));
  s.Get(R"(/api/images/(\d+)/instances)", guarded([&ws](const auto& req, auto& res) {
          send(res, 200, ws.image_instances(path_id(req)));
        }));
  s.Post(R"(/api/images/(\d+)/segment)", guarded([&ws](const auto& req, auto& res) {
           send(res, 200, ws.segment(path_id(req)));
         }));
  s.Get(R"(/api/instances/(\d+)/features)", guarded([&ws](const auto& req, auto& res) {
          send(res, 200, ws.instance_features(path_id(req)));
        }));
  s.Get(R"(/api/instances/(\d+)/similar)", guarded([&ws](const auto& req, auto& res) {
          std::size_t k = 5;
          if (req.has_param("k")) {
            const std::string raw = req.get_param_value("k");
            auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), k);
            if (ec != std::errc() || ptr != raw.data() + raw.size()) {
              throw Error(ErrorCode::invalid_argument, "k must be a positive integer");
            }
          }
          send(res, 200, ws.similar(path_id(req), k));
        }));
  s.Post(R"(/api/instances/(\d+)/contour)", guarded([&ws](const auto& req, auto& res) {
           send(res, 200, ws.edit_contour(path_id(req), body_of(req)));
         }));
  s.Post(R"(/api/instances/(\d+)/label)", guarded([&ws](const auto& req, auto& res) {
           const json body = body_of(req);
           if (!body.contains("class") || !body["class"].is_string()) {
             throw DetailedError(ErrorCode::invalid_argument, "body needs a 'class' string",
                                 {{"classes", class_list()}});
           }
           send(res, 200,
                ws.set_label(path_id(req), body["class"].template get<std::string>(),
                             body.value("actor", "expert")));
         }));
  s.Post(R"(/api/instances/(\d+)/select)", guarded([&ws](const auto& req, auto& res) {
           const json body = body_of(req);
           if (!body.contains("selected") || !body["selected"].is_boolean()) {
             throw Error(ErrorCode::invalid_argument, "body needs a boolean 'selected'");
           }
           send(res, 200,
                ws.select(path_id(req), body["selected"].template get<bool>(),
                          body.value("actor", "expert")));
         }));
  s.Get("/api/projection",
        guarded([&ws](const auto&, auto& res) { send(res, 200, ws.projection()); }));
  s.Post("/api/projection/refit",
         guarded([&ws](const auto&, auto& res) { send(res, 200, ws.refit_projection()); }));
  s.Post("/api/train", guarded([&ws](const auto& req, auto& res) {
           const json body = body_of(req);
           std::vector<InstanceId> samples;
           if (body.contains("samples")) {
             samples = body["samples"].template get<std::vector<InstanceId>>();
             if (samples.empty()) {
               throw DetailedError(ErrorCode::invalid_argument, "no samples selected for training",
                                   {{"selected", 0}});
             }
           }
           const json out = ws.train(std::move(samples));
           send(res, out["round"]["status"] == "running" ? 202 : 200, out);
         }));
  s.Get(R"(/api/train/(\d+))", guarded([&ws](const auto& req, auto& res) {
          const std::uint64_t n = path_id(req);
          if (n > std::numeric_limits<std::uint32_t>::max()) {
            throw Error(ErrorCode::not_found, "training round not found");
          }
          send(res, 200, ws.training_round(static_cast<std::uint32_t>(n)));
        }));
  s.Get("/api/eval/history",
        guarded([&ws](const auto&, auto& res) { send(res, 200, ws.eval_history()); }));
  s.Get("/api/classstats",
        guarded([&ws](const auto&, auto& res) { send(res, 200, ws.class_stats()); }));

  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const json body{{"code", res.status == 404 ? "not_found" : "invalid_argument"},
                    {"message", "no route for " + req.method + " " + req.path},
                    {"details", json::object()}};
    res.set_content(body.dump(), "application/json");
    return httplib::Server::HandlerResponse::Handled;
  });
}

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::io_error, "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) {
      throw Error(ErrorCode::io_error,
                  "cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    port_ = port;
  }
  return port_;
}

void ApiServer::run() { server_->listen_after_bind(); }

void ApiServer::start() {
  thread_ = std::thread([this] { run(); });
  server_->wait_until_ready();
}

void ApiServer::stop() {
  if (server_->is_running()) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace toothloop
