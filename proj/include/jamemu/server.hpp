#pragma once

// HTTP control plane and WebSocket frame streams on top of RunManager.

#include "jamemu/service.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <fmt/format.h>

#include <fstream>
#include <list>
#include <regex>
#include <sstream>

namespace jamemu {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

using HttpRequest = http::request<http::string_body>;
using HttpResponse = http::response<http::string_body>;

inline HttpResponse json_response(const HttpRequest& req, http::status status, const Json& body) {
  HttpResponse res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

inline HttpResponse error_response(const HttpRequest& req, http::status status, const std::string& message,
                                   const std::string& field = {}) {
  Json body{{"schema_version", kSchemaVersion}, {"error", message}};
  if (!field.empty()) body["field"] = field;
  return json_response(req, status, body);
}

inline HttpResponse text_response(const HttpRequest& req, const std::string& content_type, std::string body) {
  HttpResponse res{http::status::ok, req.version()};
  res.set(http::field::content_type, content_type);
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = std::move(body);
  res.prepare_payload();
  return res;
}

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no such file " + path.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Blocking server: one thread accepts, one thread per connection.
class Server {
 public:
  struct Options {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;
    std::optional<fs::path> console_dir;
  };

  Server(RunManager& manager, Options opts) : manager_(manager), opts_(std::move(opts)) {}

  ~Server() { stop(); }

  /// Bind and begin accepting. Returns the bound port (useful with port 0).
  unsigned short start() {
    tcp::endpoint ep{net::ip::make_address(opts_.address), opts_.port};
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    accept_thread_ = std::jthread([this] { accept_loop(); });
    return port_;
  }

  unsigned short port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    {
      // Unblock accept() by connecting to ourselves.
      beast::error_code ec;
      tcp::socket poke(ioc_);
      poke.connect({net::ip::make_address(opts_.address), port_}, ec);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::list<SessionThread> sessions;
    {
      std::lock_guard lock(mu_);
      for (auto* s : open_sockets_) {
        beast::error_code ec;
        s->shutdown(tcp::socket::shutdown_both, ec);
      }
      sessions.swap(sessions_);
    }
    sessions.clear();
  }

  /// Route one request. Exposed for tests that bypass the socket layer.
  HttpResponse handle(const HttpRequest& req) {
    const std::string target(req.target());
    const std::string path = target.substr(0, target.find('?'));
    static const std::regex kRun(R"(^/runs/([A-Za-z0-9_-]+)$)");
    static const std::regex kJammer(R"(^/runs/([A-Za-z0-9_-]+)/jammer$)");
    static const std::regex kStream(R"(^/runs/([A-Za-z0-9_-]+)/stream/([a-z_]+)$)");
    static const std::regex kRecord(R"(^/runs/([A-Za-z0-9_-]+)/record(/([A-Za-z0-9_.-]+))?$)");
    std::smatch m;
    try {
      if (req.method() == http::verb::options) return cors_preflight(req);
      if (path == "/runs" && req.method() == http::verb::post) {
        const auto run = manager_.start(parse_body(req));
        return json_response(req, http::status::created, run->handle());
      }
      if (path == "/runs" && req.method() == http::verb::get) {
        Json list = Json::array();
        for (const auto& r : manager_.list()) list.push_back(r->handle());
        return json_response(req, http::status::ok, Json{{"schema_version", kSchemaVersion}, {"runs", list}});
      }
      if (std::regex_match(path, m, kRun)) {
        const auto run = manager_.get(m[1]);
        if (req.method() == http::verb::get) return json_response(req, http::status::ok, run->handle());
        if (req.method() == http::verb::delete_) {
          const auto s = run->state();
          if (s == RunState::Finished || s == RunState::Aborted)
            throw LifecycleError("run " + run->id() + " already " + to_string(s));
          run->abort();
          run->wait();
          return json_response(req, http::status::ok, run->handle());
        }
        return error_response(req, http::status::method_not_allowed, "method not allowed");
      }
      if (std::regex_match(path, m, kJammer)) {
        if (req.method() != http::verb::post)
          return error_response(req, http::status::method_not_allowed, "method not allowed");
        return json_response(req, http::status::ok, manager_.command(m[1], parse_body(req)));
      }
      if (std::regex_match(path, m, kStream)) {
        // Without an upgrade a stream can only be replayed once the run has ended.
        const auto run = manager_.get(m[1]);
        if (!parse_stream_kind(m[2].str())) throw NotFoundError("unknown stream '" + m[2].str() + "'");
        const auto s = run->state();
        if (s != RunState::Finished && s != RunState::Aborted)
          return error_response(req, http::status::upgrade_required, "live streams require a WebSocket upgrade");
        auto sub = manager_.subscribe(m[1], m[2].str());
        std::string body;
        while (auto f = sub->next(std::chrono::milliseconds(0))) body += *f + "\n";
        return text_response(req, "application/x-ndjson", std::move(body));
      }
      if (std::regex_match(path, m, kRecord)) {
        const auto run = manager_.get(m[1]);
        const auto s = run->state();
        if (s != RunState::Finished && s != RunState::Aborted)
          throw LifecycleError("run " + run->id() + " has not ended");
        if (!m[3].matched) {
          Json summary = Json::parse(slurp(run->dir() / "record.json"));
          summary["files"] = {"metrics.csv", "spectrogram.bin", "jammer_log.jsonl", "config.json", "record.json"};
          return json_response(req, http::status::ok, summary);
        }
        const std::string name = m[3];
        static const std::map<std::string, std::string> kTypes = {
            {"metrics.csv", "text/csv"},
            {"spectrogram.bin", "application/octet-stream"},
            {"jammer_log.jsonl", "application/x-ndjson"},
            {"config.json", "application/json"},
            {"record.json", "application/json"}};
        auto it = kTypes.find(name);
        if (it == kTypes.end()) throw NotFoundError("no record file '" + name + "'");
        return text_response(req, it->second, slurp(run->dir() / name));
      }
      if (opts_.console_dir && (path == "/console" || path.starts_with("/console/"))) return serve_console(req, path);
      return error_response(req, http::status::not_found, "no route for " + path);
    } catch (const ValidationError& e) {
      return error_response(req, http::status::unprocessable_entity, e.what(), e.field());
    } catch (const NotFoundError& e) {
      return error_response(req, http::status::not_found, e.what());
    } catch (const LifecycleError& e) {
      return error_response(req, http::status::conflict, e.what());
    } catch (const CapacityError& e) {
      return error_response(req, http::status::too_many_requests, e.what());
    } catch (const std::exception& e) {
      return error_response(req, http::status::internal_server_error, e.what());
    }
  }

 private:
  static Json parse_body(const HttpRequest& req) {
    try {
      return Json::parse(req.body());
    } catch (const Json::parse_error& e) {
      throw ValidationError("body", std::string("malformed JSON: ") + e.what());
    }
  }

  HttpResponse cors_preflight(const HttpRequest& req) {
    HttpResponse res{http::status::no_content, req.version()};
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
    res.set(http::field::access_control_allow_headers, "Content-Type");
    res.keep_alive(req.keep_alive());
    res.prepare_payload();
    return res;
  }

  HttpResponse serve_console(const HttpRequest& req, const std::string& path) {
    std::string rel = path.size() > 9 ? path.substr(9) : "";
    if (rel.empty()) rel = "index.html";
    if (rel.find("..") != std::string::npos) throw NotFoundError("bad path");
    const fs::path file = *opts_.console_dir / rel;
    static const std::map<std::string, std::string> kTypes = {
        {".html", "text/html"}, {".js", "text/javascript"}, {".css", "text/css"}, {".json", "application/json"}};
    auto it = kTypes.find(file.extension().string());
    return text_response(req, it == kTypes.end() ? "application/octet-stream" : it->second, slurp(file));
  }

  void accept_loop() {
    while (!stopping_) {
      beast::error_code ec;
      tcp::socket sock(ioc_);
      acceptor_.accept(sock, ec);
      if (stopping_) break;
      if (ec) continue;
      std::lock_guard lock(mu_);
      sessions_.remove_if([](const SessionThread& t) { return t.done->load(); });
      auto done = std::make_shared<std::atomic<bool>>(false);
      sessions_.push_back({std::jthread([this, done, s = std::move(sock)]() mutable {
                             session(std::move(s));
                             done->store(true);
                           }),
                           done});
    }
    beast::error_code ec;
    acceptor_.close(ec);
  }

  void track(tcp::socket* s, bool add) {
    std::lock_guard lock(mu_);
    if (add) open_sockets_.push_back(s);
    else std::erase(open_sockets_, s);
  }

  void session(tcp::socket sock) {
    track(&sock, true);
    beast::flat_buffer buffer;
    beast::error_code ec;
    while (!stopping_) {
      HttpRequest req;
      http::read(sock, buffer, req, ec);
      if (ec) break;
      if (websocket::is_upgrade(req)) {
        track(&sock, false);
        stream_session(std::move(sock), req);
        return;
      }
      auto res = handle(req);
      http::write(sock, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    sock.shutdown(tcp::socket::shutdown_send, ec);
    track(&sock, false);
  }

  void stream_session(tcp::socket sock, const HttpRequest& req) {
    websocket::stream<tcp::socket> ws(std::move(sock));
    track(&ws.next_layer(), true);
    beast::error_code ec;
    static const std::regex kStream(R"(^/runs/([A-Za-z0-9_-]+)/stream/([a-z_]+)$)");
    const std::string target(req.target());
    const std::string path = target.substr(0, target.find('?'));
    std::smatch m;
    std::shared_ptr<Subscription> sub;
    std::string refusal;
    if (!std::regex_match(path, m, kStream)) {
      refusal = "no stream at " + path;
    } else {
      try {
        sub = manager_.subscribe(m[1], m[2].str());
      } catch (const std::exception& e) {
        refusal = e.what();
      }
    }
    if (!sub) {
      // Refuse the upgrade with a plain HTTP error.
      auto res = error_response(req, http::status::not_found, refusal);
      res.keep_alive(false);
      http::write(ws.next_layer(), res, ec);
      track(&ws.next_layer(), false);
      return;
    }
    ws.accept(req, ec);
    if (ec) {
      track(&ws.next_layer(), false);
      return;
    }
    ws.text(true);
    while (!stopping_) {
      auto frame = sub->next(std::chrono::milliseconds(100));
      if (frame) {
        ws.write(net::buffer(*frame), ec);
        if (ec) break;
      } else if (sub->ended()) {
        ws.close(websocket::close_code::normal, ec);
        break;
      }
    }
    track(&ws.next_layer(), false);
  }

  RunManager& manager_;
  Options opts_;
  net::io_context ioc_;
  tcp::acceptor acceptor_{ioc_};
  unsigned short port_ = 0;
  std::atomic<bool> stopping_{false};
  std::jthread accept_thread_;
  std::mutex mu_;
  struct SessionThread {
    std::jthread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::list<SessionThread> sessions_;
  std::vector<tcp::socket*> open_sockets_;
};

}  // namespace jamemu
