#include "sec/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "sec/codec.hpp"

namespace sec {
namespace {

constexpr std::size_t kMaxLine = 16u << 20;

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd() const noexcept { return fd_; }

 private:
  int fd_;
};

[[noreturn]] void sys_error(const std::string& what) {
  throw Error(Errc::Io, what + ": " + std::strerror(errno));
}

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

void serve_connection(SidecarServer& server, int fd) {
  std::string buffer;
  char chunk[4096];
  while (true) {
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (auto nl = buffer.find('\n', start); nl != std::string::npos; nl = buffer.find('\n', start)) {
      const auto reply = server.handle_line(std::string_view(buffer).substr(start, nl - start));
      start = nl + 1;
      std::string out;
      for (const auto& line : reply.lines) out += line + "\n";
      if (!send_all(fd, out) || reply.close) return;
    }
    buffer.erase(0, start);
    if (buffer.size() > kMaxLine) {
      const auto reply = server.handle_line("line too long");
      for (const auto& line : reply.lines) send_all(fd, line + "\n");
      return;
    }
  }
}

}  // namespace

TransportSpec TransportSpec::parse(std::string_view text) {
  if (text == "stdio") return {};
  if (text.substr(0, 4) == "tcp:") {
    const auto port = codec::parse_u64(text.substr(4));
    if (port > 65535) throw Error(Errc::BadConfig, "port out of range");
    return {Kind::Tcp, static_cast<std::uint16_t>(port)};
  }
  throw Error(Errc::BadConfig, "transport must be 'stdio' or 'tcp:<port>'");
}

void serve_stream(SidecarServer& server, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    const auto reply = server.handle_line(line);
    for (const auto& l : reply.lines) out << l << '\n';
    out.flush();
    if (reply.close) break;
  }
  server.disconnect();
}

void serve_tcp(SidecarServer& server, std::uint16_t port,
               const std::function<void(std::uint16_t)>& on_listening,
               std::size_t max_connections) {
  Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.fd() < 0) sys_error("socket");
  const int yes = 1;
  ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) sys_error("bind");
  if (::listen(listener.fd(), 1) < 0) sys_error("listen");
  socklen_t len = sizeof addr;
  if (::getsockname(listener.fd(), reinterpret_cast<sockaddr*>(&addr), &len) < 0) sys_error("getsockname");
  if (on_listening) on_listening(ntohs(addr.sin_port));

  for (std::size_t served = 0; max_connections == 0 || served < max_connections; ++served) {
    Socket conn(::accept(listener.fd(), nullptr, nullptr));
    if (conn.fd() < 0) {
      if (errno == EINTR) continue;
      sys_error("accept");
    }
    serve_connection(server, conn.fd());
    server.disconnect();
  }
}

}  // namespace sec
