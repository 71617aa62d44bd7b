#pragma once

#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "toothloop/error.hpp"
#include "toothloop/workspace.hpp"

namespace httplib {
class Server;
}

namespace toothloop {

int http_status(ErrorCode code);

/// {"code", "message", "details"}
nlohmann::json error_body(const Error& error);

/// HTTP front end for a Workspace. Routes live under /api.
class ApiServer {
 public:
  explicit ApiServer(Workspace& workspace);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Port 0 picks a free port. Throws Error{io_error} when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(); blocks.
  void run();
  /// run() on a background thread.
  void start();
  void stop();
  int port() const { return port_; }

 private:
  Workspace& workspace_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  void routes();
};

}  // namespace toothloop
