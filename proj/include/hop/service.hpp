// HTTP/WebSocket API over a running control loop.
#pragma once

#include "hop/runtime.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>

namespace hop {

struct HttpRequest {
  std::string method;  // GET, PUT, POST, DELETE, OPTIONS
  std::string target;  // path, optionally with a query string
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON text, empty for 204
};

/// Request routing independent of the transport. Loop commands are queued on
/// the runtime and answered once a tick has drained them.
class Service {
 public:
  explicit Service(std::shared_ptr<Runtime> rt,
                   std::chrono::milliseconds command_timeout = std::chrono::milliseconds(2000));

  HttpResponse handle(const HttpRequest& req) const;

 private:
  HttpResponse command(Command c) const;

  std::shared_ptr<Runtime> rt_;
  std::chrono::milliseconds timeout_;
};

/// Ticks a runtime on its own thread at the configured rate (scaled by
/// `speed`; 0 runs unpaced).
class LoopRunner {
 public:
  LoopRunner(std::shared_ptr<Runtime> rt, std::function<void(const RobotSnapshot&)> on_tick, double speed = 1.0);
  ~LoopRunner();
  LoopRunner(const LoopRunner&) = delete;
  LoopRunner& operator=(const LoopRunner&) = delete;

  void start();
  void stop();
  bool running() const { return running_; }

 private:
  std::shared_ptr<Runtime> rt_;
  std::function<void(const RobotSnapshot&)> on_tick_;
  double speed_;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

/// Boost.Beast server: the HTTP routes of Service plus WS /stream pushing one
/// snapshot line per tick.
class ApiServer {
 public:
  struct Options {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    double speed = 1.0;          // loop pacing, see LoopRunner
    std::size_t max_stream_backlog = 100000;  // queued messages before a stream is closed
  };

  ApiServer(std::shared_ptr<Runtime> rt, Options opt);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds, then starts the I/O and loop threads. Throws std::runtime_error.
  void start();
  void stop();
  unsigned short port() const { return port_; }

  struct Impl;

 private:
  std::shared_ptr<Runtime> rt_;
  Options opt_;
  std::shared_ptr<Impl> impl_;
  std::unique_ptr<LoopRunner> loop_;
  std::thread io_thread_;
  unsigned short port_ = 0;
};

}  // namespace hop
