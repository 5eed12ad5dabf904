#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "telecg/ingest.hpp"

namespace httplib {
class Server;
}

namespace telecg {

struct HttpServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t worker_threads = 64;
  /// Static viewer assets served under /ui/ when the directory exists.
  std::filesystem::path ui_dir;
  std::chrono::milliseconds stream_heartbeat{1000};
};

/// Parses "host:port" (or ":port" / "port").
void parse_listen_address(const std::string& text, std::string& host, int& port);

/// REST + event-stream front end over an IngestService.
class HttpServer {
 public:
  HttpServer(IngestService& service, HttpServerConfig config);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the listening socket; throws std::runtime_error if the port is taken.
  int bind();
  /// Serves on the calling thread until stop().
  void run();
  /// bind() + run() on a background thread.
  int start();
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

 private:
  void install_routes();

  IngestService& service_;
  HttpServerConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  int port_ = -1;
};

}  // namespace telecg
