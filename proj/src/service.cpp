#include "hop/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <optional>
#include <vector>

namespace hop {

using nlohmann::json;

namespace {

HttpResponse reply(int status, const json& body) { return {status, body.dump()}; }
HttpResponse error(int status, const std::string& message) { return reply(status, {{"error", message}}); }

std::vector<std::string> split_path(const std::string& target) {
  const std::string path = target.substr(0, target.find('?'));
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    const std::size_t j = path.find('/', i);
    out.push_back(path.substr(i, j == std::string::npos ? std::string::npos : j - i));
    if (j == std::string::npos) break;
    i = j;
  }
  return out;
}

json pose_json(const Pose& p) {
  const Quat& q = p.rotation;
  return {{"position", {p.position.x(), p.position.y(), p.position.z()}}, {"rotation", {q.w(), q.x(), q.y(), q.z()}}};
}

int status_for(CommandStatus s) {
  switch (s) {
    case CommandStatus::ok: return 200;
    case CommandStatus::unknown_motion: return 404;
    case CommandStatus::fallen:
    case CommandStatus::busy: return 409;
  }
  return 500;
}

std::optional<json> parse_body(const std::string& body, HttpResponse& err) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    err = error(400, std::string("invalid JSON body: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

Service::Service(std::shared_ptr<Runtime> rt, std::chrono::milliseconds command_timeout)
    : rt_(std::move(rt)), timeout_(command_timeout) {
  if (!rt_) throw std::invalid_argument("service needs a runtime");
}

HttpResponse Service::command(Command c) const {
  auto fut = rt_->enqueue(std::move(c));
  if (fut.wait_for(timeout_) != std::future_status::ready) return error(503, "control loop did not respond");
  const CommandResult r = fut.get();
  if (r.status != CommandStatus::ok) {
    return reply(status_for(r.status), {{"error", r.message}, {"status", to_string(r.status)}});
  }
  return reply(200, {{"status", "ok"}});
}

HttpResponse Service::handle(const HttpRequest& req) const {
  const auto seg = split_path(req.target);
  const std::string& m = req.method;
  if (m == "OPTIONS") return {204, ""};
  HttpResponse bad;

  if (seg.size() == 1 && seg[0] == "model") {
    if (m != "GET") return error(405, "method not allowed");
    return reply(200, rt_->model().document());
  }
  if (seg.size() == 1 && seg[0] == "state") {
    if (m != "GET") return error(405, "method not allowed");
    const auto s = rt_->latest();
    if (!s) return error(503, "no tick has run yet");
    return reply(200, to_json(*s));
  }
  if (!seg.empty() && seg[0] == "motions") {
    if (seg.size() == 1) {
      if (m != "GET") return error(405, "method not allowed");
      return reply(200, {{"motions", rt_->motions().names()}});
    }
    if (seg.size() != 2) return error(404, "not found");
    const std::string& name = seg[1];
    if (m == "GET") {
      const auto mo = rt_->motions().find(name);
      if (!mo) return error(404, "unknown motion '" + name + "'");
      return reply(200, to_json(*mo));
    }
    if (m == "DELETE") {
      if (!rt_->motions().erase(name)) return error(404, "unknown motion '" + name + "'");
      return {204, ""};
    }
    if (m == "PUT") {
      if (!valid_motion_name(name)) return error(400, "invalid motion name '" + name + "'");
      auto body = parse_body(req.body, bad);
      if (!body) return bad;
      if (body->is_object() && !body->contains("name")) (*body)["name"] = name;
      Motion mo;
      try {
        mo = parse_motion(*body);
      } catch (const MotionError& e) {
        return reply(400, {{"error", e.what()},
                           {"kind", to_string(e.kind())},
                           {"keyframe", e.keyframe()},
                           {"path", e.path()},
                           {"violations", json::array()}});
      }
      if (mo.name != name) return error(400, "motion name '" + mo.name + "' does not match the URL");
      MotionCheckOptions opt;
      opt.control_rate = rt_->config().loop_rate;
      const auto violations = validate_against_model(mo, rt_->model(), opt);
      if (!violations.empty()) {
        json v = json::array();
        for (const auto& x : violations) v.push_back(to_json(x));
        return reply(400, {{"error", "motion violates the model limits"}, {"violations", v}});
      }
      const bool existed = rt_->motions().find(name).has_value();
      try {
        rt_->motions().put(mo);
      } catch (const std::exception& e) {
        return error(500, std::string("cannot store motion: ") + e.what());
      }
      return reply(existed ? 200 : 201, {{"name", name}, {"keyframes", mo.keyframes.size()}});
    }
    return error(405, "method not allowed");
  }
  if (seg.size() == 1 && (seg[0] == "fk" || seg[0] == "play" || seg[0] == "stop" || seg[0] == "gait" ||
                          seg[0] == "reset")) {
    if (m != "POST") return error(405, "method not allowed");
    auto body = parse_body(req.body, bad);
    if (!body) return bad;
    if (!body->is_object()) return error(400, "request body must be a JSON object");
    const json& b = *body;
    Command c;
    if (seg[0] == "fk") {
      const int n = rt_->model().num_joints();
      if (!b.contains("positions") || !b["positions"].is_array() || b["positions"].size() != std::size_t(n)) {
        return error(400, "positions must be an array of " + std::to_string(n) + " numbers");
      }
      VecX q(n);
      for (int i = 0; i < n; ++i) {
        const json& v = b["positions"][i];
        if (!v.is_number() || !std::isfinite(v.get<double>())) return error(400, "positions must be finite numbers");
        q[i] = v.get<double>();
      }
      json links = json::object();
      for (const auto& [name, pose] : forward_kinematics(rt_->model(), q)) links[name] = pose_json(pose);
      return reply(200, {{"links", links}});
    }
    if (seg[0] == "play") {
      if (!b.contains("name") || !b["name"].is_string()) return error(400, "play needs a motion name");
      c.type = Command::Type::play;
      c.motion = b["name"].get<std::string>();
      if (!rt_->motions().find(c.motion)) return error(404, "unknown motion '" + c.motion + "'");
    } else if (seg[0] == "stop") {
      c.type = Command::Type::stop;
    } else if (seg[0] == "reset") {
      c.type = Command::Type::reset;
    } else {
      c.type = Command::Type::gait;
      auto num = [&](const char* key, double& out) {
        if (!b.contains(key)) return true;
        if (!b[key].is_number()) return false;
        out = b[key].get<double>();
        return std::isfinite(out);
      };
      if (!num("vx", c.gait.vx) || !num("vy", c.gait.vy) || !num("omega", c.gait.omega)) {
        return error(400, "vx, vy and omega must be finite numbers");
      }
      if (b.contains("walk")) {
        if (!b["walk"].is_boolean()) return error(400, "walk must be a boolean");
        c.gait.walk = b["walk"].get<bool>();
      } else {
        c.gait.walk = true;
      }
    }
    return command(std::move(c));
  }
  return error(404, "not found");
}

// ---------------------------------------------------------------------------

LoopRunner::LoopRunner(std::shared_ptr<Runtime> rt, std::function<void(const RobotSnapshot&)> on_tick, double speed)
    : rt_(std::move(rt)), on_tick_(std::move(on_tick)), speed_(speed) {
  if (!rt_) throw std::invalid_argument("loop runner needs a runtime");
  if (!(speed_ >= 0.0)) throw std::invalid_argument("loop speed must be non-negative");
}

LoopRunner::~LoopRunner() { stop(); }

void LoopRunner::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] {
    using clock = std::chrono::steady_clock;
    const auto period = speed_ > 0.0 ? std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(rt_->config().dt() / speed_))
                                     : clock::duration::zero();
    auto next = clock::now();
    while (running_) {
      const RobotSnapshot s = rt_->tick();
      if (on_tick_) on_tick_(s);
      if (period > clock::duration::zero()) {
        next += period;
        const auto now = clock::now();
        if (next < now - 10 * period) next = now;  // fell far behind: re-anchor
        std::this_thread::sleep_until(next);
      }
    }
  });
}

void LoopRunner::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

class StreamSession;

}  // namespace

struct ApiServer::Impl {
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  Service service;
  std::size_t max_backlog;
  std::vector<std::weak_ptr<StreamSession>> streams;

  Impl(std::shared_ptr<Runtime> rt, std::size_t backlog) : service(std::move(rt)), max_backlog(backlog) {}
  void do_accept();
  void broadcast(const std::shared_ptr<const std::string>& msg);
  void close_streams();
};

namespace {

void add_headers(http::response<http::string_body>& res) {
  res.set(http::field::server, "hop-runtime");
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.set(http::field::access_control_allow_methods, "GET, PUT, POST, DELETE, OPTIONS");
  res.set(http::field::access_control_allow_headers, "Content-Type");
}

class StreamSession : public std::enable_shared_from_this<StreamSession> {
 public:
  StreamSession(tcp::socket&& socket, ApiServer::Impl* server) : ws_(std::move(socket)), server_(server) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void send(const std::shared_ptr<const std::string>& msg) {
    if (!open_) return;
    if (queue_.size() >= server_->max_backlog) {
      close();
      return;
    }
    queue_.push_back(msg);
    if (queue_.size() == 1) do_write();
  }

  void close() {
    if (!open_) return;
    open_ = false;
    queue_.clear();
    ws_.async_close(websocket::close_code::going_away, [self = shared_from_this()](beast::error_code) {});
  }

  bool open() const { return open_; }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    open_ = true;
    server_->streams.push_back(weak_from_this());
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        self->queue_.clear();
        return;
      }
      self->buffer_.consume(self->buffer_.size());
      self->do_read();
    });
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        self->queue_.clear();
        return;
      }
      if (self->queue_.empty()) return;
      self->queue_.pop_front();
      if (!self->queue_.empty() && self->open_) self->do_write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  ApiServer::Impl* server_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool open_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, ApiServer::Impl* server) : stream_(std::move(socket)), server_(server) {}

  void run() { do_read(); }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(8 * 1024 * 1024);
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, *parser_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    http::request<http::string_body> req = parser_->release();
    if (websocket::is_upgrade(req)) {
      if (split_path(std::string(req.target())) == std::vector<std::string>{"stream"}) {
        stream_.expires_never();
        std::make_shared<StreamSession>(stream_.release_socket(), server_)->run(std::move(req));
        return;
      }
    }
    HttpResponse r;
    if (websocket::is_upgrade(req)) {
      r = error(404, "no websocket endpoint at this path");
    } else {
      r = server_->service.handle(
          {std::string(req.method_string()), std::string(req.target()), std::move(req.body())});
    }
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), req.version());
    add_headers(*res);
    res->keep_alive(req.keep_alive());
    res->body() = std::move(r.body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  ApiServer::Impl* server_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
};

}  // namespace

void ApiServer::Impl::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), this)->run();
    do_accept();
  });
}

void ApiServer::Impl::broadcast(const std::shared_ptr<const std::string>& msg) {
  std::vector<std::weak_ptr<StreamSession>> alive;
  for (auto& w : streams) {
    if (auto s = w.lock(); s && s->open()) {
      s->send(msg);
      alive.push_back(w);
    }
  }
  streams.swap(alive);
}

void ApiServer::Impl::close_streams() {
  for (auto& w : streams) {
    if (auto s = w.lock()) s->close();
  }
  streams.clear();
}

ApiServer::ApiServer(std::shared_ptr<Runtime> rt, Options opt) : rt_(std::move(rt)), opt_(std::move(opt)) {
  if (!rt_) throw std::invalid_argument("server needs a runtime");
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::start() {
  if (impl_) return;
  impl_ = std::make_shared<Impl>(rt_, opt_.max_stream_backlog);
  try {
    const tcp::endpoint ep(net::ip::make_address(opt_.address), opt_.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const std::exception& e) {
    impl_.reset();
    throw std::runtime_error("cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + e.what());
  }
  port_ = impl_->acceptor.local_endpoint().port();
  impl_->do_accept();
  Impl* impl = impl_.get();
  io_thread_ = std::thread([impl] {
    auto guard = net::make_work_guard(impl->ioc);
    impl->ioc.run();
  });
  loop_ = std::make_unique<LoopRunner>(
      rt_,
      [impl](const RobotSnapshot& s) {
        auto msg = std::make_shared<const std::string>(snapshot_line(s));
        net::post(impl->ioc, [impl, msg] { impl->broadcast(msg); });
      },
      opt_.speed);
  loop_->start();
}

void ApiServer::stop() {
  if (!impl_) return;
  if (loop_) loop_->stop();
  loop_.reset();
  Impl* impl = impl_.get();
  net::post(impl->ioc, [impl] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    impl->close_streams();
  });
  // Let the close frames go out before the loop stops.
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  impl->ioc.stop();
  if (io_thread_.joinable()) io_thread_.join();
  impl_.reset();
}

}  // namespace hop
