#pragma once

// OSC 1.0 messages: codec, the application address space, and UDP transport.
// Bundles and time tags are not supported.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "exsampling/error.hpp"
#include "exsampling/mapping.hpp"
#include "exsampling/note.hpp"

namespace exsampling::osc {

struct Blob {
  std::vector<std::uint8_t> bytes;
  friend bool operator==(const Blob&, const Blob&) = default;
};

using Argument = std::variant<std::int32_t, float, std::string, Blob>;

struct Message {
  std::string address;
  std::vector<Argument> args;

  friend bool operator==(const Message&, const Message&) = default;
};

inline constexpr std::string_view kSampleAddress = "/exsampling/sample";
inline constexpr std::string_view kNoteAddress = "/exsampling/note";

namespace detail {

inline std::size_t padded4(std::size_t n) { return (n + 3) & ~std::size_t{3}; }

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

// NUL-terminated, zero-padded to a multiple of four.
inline void put_string(std::vector<std::uint8_t>& out, std::string_view s) {
  out.insert(out.end(), s.begin(), s.end());
  out.resize(out.size() + padded4(s.size() + 1) - s.size(), 0);
}

inline std::uint32_t get_be32(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error(ErrorCode::Malformed, "truncated 32-bit field");
  const std::uint32_t v = (static_cast<std::uint32_t>(in[pos]) << 24) | (static_cast<std::uint32_t>(in[pos + 1]) << 16) |
                          (static_cast<std::uint32_t>(in[pos + 2]) << 8) | static_cast<std::uint32_t>(in[pos + 3]);
  pos += 4;
  return v;
}

inline std::string get_string(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::size_t end = pos;
  while (end < in.size() && in[end] != 0) ++end;
  if (end == in.size()) throw Error(ErrorCode::Malformed, "unterminated string");
  std::string s(reinterpret_cast<const char*>(in.data() + pos), end - pos);
  const std::size_t next = pos + padded4(s.size() + 1);
  if (next > in.size()) throw Error(ErrorCode::Malformed, "string padding runs past end");
  for (std::size_t i = end; i < next; ++i)
    if (in[i] != 0) throw Error(ErrorCode::Malformed, "non-zero string padding");
  pos = next;
  return s;
}

inline char type_tag(const Argument& a) {
  switch (a.index()) {
    case 0: return 'i';
    case 1: return 'f';
    case 2: return 's';
    default: return 'b';
  }
}

}  // namespace detail

inline void validate_address(std::string_view address) {
  if (address.empty() || address.front() != '/') throw Error(ErrorCode::InvalidAddress, "address must start with '/'");
  if (address.find('\0') != std::string_view::npos) throw Error(ErrorCode::InvalidAddress, "NUL inside address");
}

inline std::vector<std::uint8_t> encode(const Message& msg) {
  validate_address(msg.address);
  std::vector<std::uint8_t> out;
  detail::put_string(out, msg.address);
  std::string tags = ",";
  for (const auto& a : msg.args) tags += detail::type_tag(a);
  detail::put_string(out, tags);
  for (const auto& a : msg.args) {
    if (const auto* i = std::get_if<std::int32_t>(&a)) {
      detail::put_be32(out, static_cast<std::uint32_t>(*i));
    } else if (const auto* f = std::get_if<float>(&a)) {
      detail::put_be32(out, std::bit_cast<std::uint32_t>(*f));
    } else if (const auto* s = std::get_if<std::string>(&a)) {
      if (s->find('\0') != std::string::npos) throw Error(ErrorCode::InvalidArgument, "NUL inside string argument");
      detail::put_string(out, *s);
    } else {
      const auto& b = std::get<Blob>(a).bytes;
      detail::put_be32(out, static_cast<std::uint32_t>(b.size()));
      out.insert(out.end(), b.begin(), b.end());
      out.resize(detail::padded4(out.size()), 0);
    }
  }
  return out;
}

inline Message decode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % 4 != 0)
    throw Error(ErrorCode::Malformed, "packet length " + std::to_string(bytes.size()) + " is not a multiple of 4");
  std::size_t pos = 0;
  Message msg;
  msg.address = detail::get_string(bytes, pos);
  if (msg.address.empty() || msg.address.front() != '/') throw Error(ErrorCode::Malformed, "bad address");
  if (pos >= bytes.size()) throw Error(ErrorCode::Malformed, "missing type tag string");
  const std::string tags = detail::get_string(bytes, pos);
  if (tags.empty() || tags.front() != ',') throw Error(ErrorCode::Malformed, "type tag string must start with ','");
  for (std::size_t t = 1; t < tags.size(); ++t) {
    switch (tags[t]) {
      case 'i':
        msg.args.emplace_back(static_cast<std::int32_t>(detail::get_be32(bytes, pos)));
        break;
      case 'f':
        msg.args.emplace_back(std::bit_cast<float>(detail::get_be32(bytes, pos)));
        break;
      case 's':
        msg.args.emplace_back(detail::get_string(bytes, pos));
        break;
      case 'b': {
        const std::size_t n = detail::get_be32(bytes, pos);
        if (n > bytes.size() - pos || detail::padded4(n) > bytes.size() - pos)
          throw Error(ErrorCode::Malformed, "blob runs past end");
        Blob blob{{bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n)}};
        for (std::size_t i = pos + n; i < pos + detail::padded4(n); ++i)
          if (bytes[i] != 0) throw Error(ErrorCode::Malformed, "non-zero blob padding");
        pos += detail::padded4(n);
        msg.args.emplace_back(std::move(blob));
        break;
      }
      default:
        throw Error(ErrorCode::UnsupportedType, std::string("type tag '") + tags[t] + "'");
    }
  }
  if (pos != bytes.size()) throw Error(ErrorCode::Malformed, "trailing bytes after arguments");
  return msg;
}

// "/exsampling/sample" ,ssssfffi: id, path, label, instrument, original MIDI,
// lat, lon, has_location (lat = lon = 0 when absent).
inline Message sample_announce(const SampleAssignment& a) {
  const bool has_loc = a.location.has_value();
  return Message{std::string(kSampleAddress),
                 {a.sample_id, a.file_path, std::string(a.label.name()), std::string(to_string(a.instrument)),
                  static_cast<float>(a.original_midi()), has_loc ? static_cast<float>(a.location->lat) : 0.0f,
                  has_loc ? static_cast<float>(a.location->lon) : 0.0f, std::int32_t{has_loc ? 1 : 0}}};
}

// "/exsampling/note" ,siii: instrument, MIDI note, velocity, duration in ms.
inline NoteEvent parse_note(const Message& msg) {
  if (msg.address != kNoteAddress) throw Error(ErrorCode::InvalidAddress, msg.address);
  if (msg.args.size() != 4 || !std::holds_alternative<std::string>(msg.args[0]) ||
      !std::holds_alternative<std::int32_t>(msg.args[1]) || !std::holds_alternative<std::int32_t>(msg.args[2]) ||
      !std::holds_alternative<std::int32_t>(msg.args[3]))
    throw Error(ErrorCode::Malformed, "note message must be ,siii");
  NoteEvent ev;
  ev.instrument = parse_track(std::get<std::string>(msg.args[0]));
  ev.note = std::get<std::int32_t>(msg.args[1]);
  ev.velocity = std::get<std::int32_t>(msg.args[2]);
  ev.duration_ms = std::get<std::int32_t>(msg.args[3]);
  ev.onset_ms = 0;
  validate(ev);
  return ev;
}

inline Message note_message(const NoteEvent& ev) {
  return Message{std::string(kNoteAddress),
                 {std::string(to_string(ev.instrument)), std::int32_t{ev.note}, std::int32_t{ev.velocity},
                  std::int32_t{ev.duration_ms}}};
}

// ---------------------------------------------------------------------------
// UDP transport: one message per datagram.

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  // "host:port"
  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == text.size())
      throw Error(ErrorCode::InvalidArgument, "expected host:port, got " + std::string(text));
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    if (ep.host.empty()) ep.host = "0.0.0.0";
    const auto port_text = std::string(text.substr(colon + 1));
    char* end = nullptr;
    const long port = std::strtol(port_text.c_str(), &end, 10);
    if (*end != '\0' || port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port " + port_text);
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
  }

  std::string to_string() const { return host + ":" + std::to_string(port); }
};

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    std::swap(fd_, o.fd_);
    return *this;
  }
  int get() const noexcept { return fd_; }

 private:
  int fd_ = -1;
};

inline sockaddr_in resolve_ipv4(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) throw Error(ErrorCode::SocketError, "cannot resolve " + ep.host + ": " + gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(ep.port);
  return addr;
}

}  // namespace detail

class UdpSender {
 public:
  explicit UdpSender(const Endpoint& target)
      : target_(target), addr_(detail::resolve_ipv4(target)), socket_(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0)) {
    if (socket_.get() < 0) throw Error(ErrorCode::SocketError, std::string("socket: ") + std::strerror(errno));
  }

  void send(const Message& msg) {
    const auto bytes = encode(msg);
    std::lock_guard lock(mutex_);
    const auto n = ::sendto(socket_.get(), bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&addr_),
                            sizeof addr_);
    if (n < 0 || static_cast<std::size_t>(n) != bytes.size())
      throw Error(ErrorCode::SocketError, "sendto " + target_.to_string() + ": " + std::strerror(errno));
  }

  const Endpoint& target() const noexcept { return target_; }

 private:
  Endpoint target_;
  sockaddr_in addr_;
  detail::Socket socket_;
  std::mutex mutex_;
};

// What the listener hands to its handler for each datagram.
struct Received {
  std::optional<Message> message;
  std::string error;  // set when the datagram did not decode
  std::vector<std::uint8_t> raw;
};

// Single receive loop on its own thread; the handler runs on that thread.
class UdpListener {
 public:
  using Handler = std::function<void(const Received&)>;

  UdpListener(const Endpoint& bind_to, Handler handler)
      : socket_(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0)), handler_(std::move(handler)) {
    if (socket_.get() < 0) throw Error(ErrorCode::SocketError, std::string("socket: ") + std::strerror(errno));
    const int big = 4 << 20;
    ::setsockopt(socket_.get(), SOL_SOCKET, SO_RCVBUF, &big, sizeof big);
    sockaddr_in addr = detail::resolve_ipv4(bind_to);
    if (::bind(socket_.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
      throw Error(ErrorCode::SocketError, "bind " + bind_to.to_string() + ": " + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(socket_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { loop(); });
  }

  explicit UdpListener(std::uint16_t port, Handler handler) : UdpListener(Endpoint{"0.0.0.0", port}, std::move(handler)) {}

  ~UdpListener() { stop(); }
  UdpListener(const UdpListener&) = delete;
  UdpListener& operator=(const UdpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  void stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
  }

 private:
  void loop() {
    std::vector<std::uint8_t> buf(65536);
    while (running_) {
      pollfd pfd{socket_.get(), POLLIN, 0};
      const int rc = ::poll(&pfd, 1, 50);
      if (rc <= 0) continue;
      const ssize_t n = ::recv(socket_.get(), buf.data(), buf.size(), 0);
      if (n < 0) continue;
      Received r;
      r.raw.assign(buf.begin(), buf.begin() + n);
      try {
        r.message = decode(r.raw);
      } catch (const Error& e) {
        r.error = e.what();
      }
      try {
        handler_(r);
      } catch (...) {
        // A failing handler must not take the listener down.
      }
    }
  }

  detail::Socket socket_;
  Handler handler_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{true};
  std::thread thread_;
};

}  // namespace exsampling::osc
