#pragma once

// HTTP front end for Service.
//
//   POST /api/recordings?lat=&lon=&participant=   body: WAV bytes
//   GET  /api/recordings/{id}
//   GET  /api/state
//   GET  /api/labels
//   GET  /  and  /join                           recorder UI assets

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>

// A burst of participants uploading at once overflows httplib's default backlog of 5.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "exsampling/service.hpp"

namespace exsampling {

namespace detail {

inline void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  reply_json(res, status, {{"error", code}, {"message", message}});
}

inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

constexpr const char* kFallbackIndex = R"(<!doctype html>
<html><head><meta charset="utf-8"><meta name="viewport" content="width=device-width,initial-scale=1">
<title>ExSampling recorder</title></head>
<body>
<h1>ExSampling</h1>
<p>The recorder UI assets are not installed on this server. Set <code>static_dir</code> in the
server config to the built recorder bundle.</p>
<p>API: <a href="/api/labels">/api/labels</a> &middot; <a href="/api/state">/api/state</a></p>
</body></html>
)";

inline std::string fallback_join_page(const std::string& recorder_url) {
  return "<!doctype html><html><head><meta charset=\"utf-8\"><title>Join ExSampling</title></head><body>"
         "<h1>Join the performance</h1><p>Open the recorder at <a href=\"" +
         recorder_url + "\">" + recorder_url + "</a></p></body></html>\n";
}

inline bool serve_file(httplib::Response& res, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream buf;
  buf << in.rdbuf();
  res.set_content(buf.str(), "text/html; charset=utf-8");
  return true;
}

}  // namespace detail

class HttpApi {
 public:
  explicit HttpApi(Service& service) : service_(service) {
    const auto& cfg = service_.config();
    // Oversized bodies below this are answered with a JSON too_large error;
    // beyond it the HTTP layer refuses them outright (also 413).
    server_.set_payload_max_length(cfg.max_upload_bytes * 2 + 1024);
    // Phones on mobile links can take a while to push a full upload.
    server_.set_read_timeout(60, 0);
    server_.set_write_timeout(30, 0);

    server_.Post("/api/recordings", [this](const httplib::Request& req, httplib::Response& res) {
      post_recording(req, res);
    });
    server_.Get(R"(/api/recordings/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto status = service_.find_status(req.matches[1]);
      if (!status) return detail::reply_error(res, 404, "not_found", "no such recording");
      detail::reply_json(res, 200, to_json(*status));
    });
    server_.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
      detail::reply_json(res, 200, state_to_json(service_.get_state()));
    });
    server_.Get("/api/labels", [this](const httplib::Request&, httplib::Response& res) {
      detail::reply_json(res, 200, labels_to_json(service_.config().mapping));
    });
    server_.Get("/", [this](const httplib::Request&, httplib::Response& res) {
      const auto& dir = service_.config().static_dir;
      if (dir.empty() || !detail::serve_file(res, dir / "index.html"))
        res.set_content(detail::kFallbackIndex, "text/html; charset=utf-8");
    });
    server_.Get("/join", [this](const httplib::Request& req, httplib::Response& res) {
      const auto& dir = service_.config().static_dir;
      if (!dir.empty() && detail::serve_file(res, dir / "join.html")) return;
      const std::string host = req.get_header_value("Host");
      res.set_content(detail::fallback_join_page("http://" + (host.empty() ? std::string("localhost") : host) + "/"),
                      "text/html; charset=utf-8");
    });
    if (!cfg.static_dir.empty() && std::filesystem::is_directory(cfg.static_dir))
      server_.set_mount_point("/static", cfg.static_dir.string());
  }

  ~HttpApi() { stop(); }
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  std::uint16_t start(const osc::Endpoint& bind) {
    const int port = bind.port == 0 ? server_.bind_to_any_port(bind.host)
                                    : (server_.bind_to_port(bind.host, bind.port) ? bind.port : -1);
    if (port < 0) throw Error(ErrorCode::SocketError, "cannot bind " + bind.to_string());
    port_ = static_cast<std::uint16_t>(port);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stop().
  void run(const osc::Endpoint& bind) {
    if (!server_.listen(bind.host, bind.port)) throw Error(ErrorCode::SocketError, "cannot listen on " + bind.to_string());
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::uint16_t port() const noexcept { return port_; }

 private:
  void post_recording(const httplib::Request& req, httplib::Response& res) {
    Submission sub;
    if (req.has_param("participant")) sub.participant = req.get_param_value("participant");
    const bool has_lat = req.has_param("lat"), has_lon = req.has_param("lon");
    if (has_lat != has_lon) return detail::reply_error(res, 400, "bad_location", "lat and lon must be given together");
    if (has_lat) {
      const auto lat = detail::parse_number(req.get_param_value("lat"));
      const auto lon = detail::parse_number(req.get_param_value("lon"));
      if (!lat || !lon || !GeoLocation::valid(*lat, *lon))
        return detail::reply_error(res, 400, "bad_location", "lat/lon out of range");
      sub.location = GeoLocation{*lat, *lon};
    }
    sub.audio.assign(req.body.begin(), req.body.end());
    try {
      const auto id = service_.submit(std::move(sub));
      detail::reply_json(res, 202, {{"id", id}, {"state", "queued"}});
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::TooLarge: return detail::reply_error(res, 413, "too_large", e.what());
        case ErrorCode::MalformedAudio: return detail::reply_error(res, 400, "malformed_audio", e.what());
        case ErrorCode::TooBusy: return detail::reply_error(res, 503, "too_busy", e.what());
        case ErrorCode::InvalidArgument: return detail::reply_error(res, 400, "bad_request", e.what());
        default: return detail::reply_error(res, 500, "internal_error", e.what());
      }
    }
  }

  Service& service_;
  httplib::Server server_;
  std::uint16_t port_ = 0;
  std::thread thread_;
};

}  // namespace exsampling
