#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>

#include "sec/protocol.hpp"

namespace sec {

struct TransportSpec {
  enum class Kind { Stdio, Tcp } kind = Kind::Stdio;
  std::uint16_t port = 0;

  /// `stdio` or `tcp:<port>` (port 0 picks an ephemeral port).
  static TransportSpec parse(std::string_view text);
};

/// Serves one connection over a pair of streams until EOF or a closing reply.
void serve_stream(SidecarServer& server, std::istream& in, std::ostream& out);

/// Accepts connections on 127.0.0.1:port one at a time. `on_listening`
/// receives the bound port. Returns after `max_connections` connections
/// (0 = serve forever).
void serve_tcp(SidecarServer& server, std::uint16_t port,
               const std::function<void(std::uint16_t)>& on_listening = {},
               std::size_t max_connections = 0);

}  // namespace sec
