#pragma once

// Text encodings shared by the registry file, the step logs and the sidecar
// wire format.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sec::codec {

/// Percent-encodes every byte outside [A-Za-z0-9._~/+-] as %XX (uppercase).
/// The output never contains space, tab, LF, ',', ':', '|', '=' or '%' literals
/// other than the escape introducer.
std::string escape(std::string_view raw);

/// Inverse of escape(). Throws Error(Parse) on a malformed escape.
std::string unescape(std::string_view text);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// 17-significant-digit rendering of a double (`%.17g` semantics, locale
/// independent). Round-trips exactly through parse_real().
std::string format_real(double value);
/// Shortest text that round-trips, for human-facing tables.
std::string format_short(double value);
double parse_real(std::string_view text);
std::uint64_t parse_u64(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);

std::uint32_t crc32(std::string_view bytes);

}  // namespace sec::codec
