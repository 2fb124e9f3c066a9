#pragma once

// Spawn a child, feed it a request on stdin, collect one line from stdout.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <utility>
#include <string>
#include <vector>

#include "exsampling/error.hpp"

extern char** environ;

namespace exsampling {

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const noexcept { return fd_; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline void make_pipe(Fd& read_end, Fd& write_end) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(ErrorCode::BridgeUnavailable, std::strerror(errno));
  read_end = Fd(fds[0]);
  write_end = Fd(fds[1]);
}

}  // namespace detail

// Writes `input` to the child's stdin, then returns the first line it prints
// (without the newline). Spawn failures, timeouts and children that exit
// without printing a line raise BridgeUnavailable.
inline std::string run_line_exchange(const std::vector<std::string>& argv, const std::string& input,
                                     int timeout_ms) {
  using detail::Fd;
  if (argv.empty()) throw Error(ErrorCode::BridgeUnavailable, "empty command");

  // A child that exits early would otherwise kill us on write.
  static std::once_flag ignore_sigpipe;
  std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });

  Fd in_r, in_w, out_r, out_w;
  detail::make_pipe(in_r, in_w);
  detail::make_pipe(out_r, out_w);

  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_r.get(), STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_w.get(), STDOUT_FILENO);
  pid_t pid = -1;
  const int spawn_rc = ::posix_spawnp(&pid, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (spawn_rc != 0) throw Error(ErrorCode::BridgeUnavailable, argv[0] + ": " + std::strerror(spawn_rc));
  in_r.reset();
  out_w.reset();

  // Reaps the child, killing it if it outlives `grace_ms`.
  auto reap = [pid](int grace_ms) {
    const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(grace_ms);
    int status = 0;
    while (true) {
      const pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid || (r < 0 && errno != EINTR)) return;
      if (std::chrono::steady_clock::now() >= until) break;
      ::usleep(1000);
    }
    ::kill(pid, SIGKILL);
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
  };

  ::fcntl(in_w.get(), F_SETFL, O_NONBLOCK);
  std::size_t written = 0;
  if (input.empty()) in_w.reset();
  std::string output;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);

  while (true) {
    if (const auto nl = output.find('\n'); nl != std::string::npos) {
      output.resize(nl);
      break;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      reap(0);
      throw Error(ErrorCode::BridgeUnavailable, "timed out waiting for reply");
    }
    pollfd fds[2] = {{out_r.get(), POLLIN, 0}, {in_w.get(), POLLOUT, 0}};
    const nfds_t nfds = in_w.get() >= 0 ? 2 : 1;
    const int rc = ::poll(fds, nfds, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      reap(0);
      throw Error(ErrorCode::BridgeUnavailable, std::string("poll: ") + std::strerror(errno));
    }
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t n = ::write(in_w.get(), input.data() + written, input.size() - written);
      if (n > 0) written += static_cast<std::size_t>(n);
      if (n < 0 && errno != EAGAIN && errno != EINTR) written = input.size();  // reader gone
      if (written == input.size()) in_w.reset();
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      char buf[4096];
      const ssize_t n = ::read(out_r.get(), buf, sizeof buf);
      if (n > 0) {
        output.append(buf, static_cast<std::size_t>(n));
      } else if (n == 0) {
        reap(1000);
        if (output.empty()) throw Error(ErrorCode::BridgeUnavailable, "bridge exited without replying");
        return output;  // final line without a trailing newline
      } else if (errno != EINTR && errno != EAGAIN) {
        reap(0);
        throw Error(ErrorCode::BridgeUnavailable, std::string("read: ") + std::strerror(errno));
      }
    }
  }
  in_w.reset();
  out_r.reset();
  reap(1000);
  return output;
}

}  // namespace exsampling
