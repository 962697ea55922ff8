#pragma once

// Minimal synchronous HTTP and WebSocket client for exercising the server.

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace testclient {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using Json = nlohmann::json;

struct Reply {
  int status = 0;
  std::string body;
  std::string content_type;

  Json json() const { return Json::parse(body); }
};

inline Reply request(unsigned short port, http::verb method, const std::string& target, const std::string& body = {},
                     const std::vector<std::pair<std::string, std::string>>& headers = {}) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  sock.connect({net::ip::make_address("127.0.0.1"), port});
  http::request<http::string_body> req{method, target, 11};
  req.set(http::field::host, "127.0.0.1");
  for (const auto& [k, v] : headers) req.set(k, v);
  if (!body.empty()) {
    req.set(http::field::content_type, "application/json");
    req.body() = body;
  }
  req.prepare_payload();
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  beast::error_code ec;
  sock.shutdown(tcp::socket::shutdown_both, ec);
  return {static_cast<int>(res.result_int()), res.body(), std::string(res[http::field::content_type])};
}

inline Reply get(unsigned short port, const std::string& target) { return request(port, http::verb::get, target); }

inline Reply post(unsigned short port, const std::string& target, const Json& body) {
  return request(port, http::verb::post, target, body.dump());
}

/// Blocking WebSocket reader for one stream.
class StreamClient {
 public:
  StreamClient(unsigned short port, const std::string& target) : ws_(ioc_) {
    ws_.next_layer().connect({net::ip::make_address("127.0.0.1"), port});
    ws_.handshake("127.0.0.1", target);
  }

  /// Next text frame, or nothing once the server closed the stream.
  std::optional<std::string> next() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return beast::buffers_to_string(buf.data());
  }

  std::vector<Json> drain() {
    std::vector<Json> out;
    while (auto f = next()) out.push_back(Json::parse(*f));
    return out;
  }

  bool closed_normally() const { return ws_.reason().code == websocket::close_code::normal; }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

}  // namespace testclient
