/*
 * Copyright 2026 The magtrack Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <functional>
#include <string>
#include <string_view>

#include "magtrack/domain.hpp"

namespace magtrack {

// Newline-delimited JSON over TCP on the loopback interface.
class LineListener {
 public:
  /// Binds 127.0.0.1:port; port 0 picks a free port.
  explicit LineListener(std::uint16_t port = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error(ErrorCode::Io, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd_, 4) < 0) {
      const std::string msg = std::strerror(errno);
      ::close(fd_);
      throw Error(ErrorCode::Io, "bind/listen on port " + std::to_string(port) + ": " + msg);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  LineListener(const LineListener&) = delete;
  LineListener& operator=(const LineListener&) = delete;

  ~LineListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const noexcept { return port_; }

  /// Accepts one client and calls `on_line` for every line until EOF.
  /// Returns the number of lines delivered.
  std::size_t serve_one(const std::function<void(std::string_view)>& on_line) {
    const int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) throw Error(ErrorCode::Io, std::string("accept: ") + std::strerror(errno));
    std::string buffer;
    std::size_t lines = 0;
    char chunk[4096];
    for (;;) {
      const ssize_t n = ::recv(client, chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
        on_line(std::string_view(buffer).substr(start, nl - start));
        ++lines;
      }
      buffer.erase(0, start);
    }
    if (!buffer.empty()) {
      on_line(buffer);
      ++lines;
    }
    ::close(client);
    return lines;
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Test/client helper: sends `payload` to 127.0.0.1:port and closes.
inline void send_lines(std::uint16_t port, std::string_view payload) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(ErrorCode::Io, "socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    ::close(fd);
    throw Error(ErrorCode::Io, "connect to port " + std::to_string(port) + " failed");
  }
  std::size_t sent = 0;
  while (sent < payload.size()) {
    const ssize_t n = ::send(fd, payload.data() + sent, payload.size() - sent, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    sent += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

}  // namespace magtrack
