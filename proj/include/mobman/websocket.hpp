#pragma once

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mobman/errors.hpp"

namespace mobman::ws {

inline constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

/// Sec-WebSocket-Accept value for a client key.
inline std::string accept_key(std::string_view client_key) {
  std::string s(client_key);
  s += kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, SHA_DIGEST_LENGTH);
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Header value (case-insensitive name) from a raw HTTP request head.
inline std::optional<std::string> header(const std::string& request, const std::string& name) {
  const std::string want = lower(name);
  std::size_t pos = request.find("\r\n");
  while (pos != std::string::npos) {
    const std::size_t start = pos + 2;
    const std::size_t end = request.find("\r\n", start);
    if (end == std::string::npos || end == start) break;
    const std::string line = request.substr(start, end - start);
    const auto colon = line.find(':');
    if (colon != std::string::npos && lower(line.substr(0, colon)) == want) {
      std::size_t b = colon + 1;
      while (b < line.size() && (line[b] == ' ' || line[b] == '\t')) ++b;
      std::size_t e = line.size();
      while (e > b && (line[e - 1] == ' ' || line[e - 1] == '\t')) --e;
      return line.substr(b, e - b);
    }
    pos = end;
  }
  return std::nullopt;
}

/// 101 response for a complete upgrade request head (terminated by a blank line).
inline std::string handshake_response(const std::string& request) {
  if (request.rfind("GET ", 0) != 0) throw ValidationError("websocket: not a GET request");
  const auto up = header(request, "Upgrade");
  if (!up || lower(*up) != "websocket") throw ValidationError("websocket: missing Upgrade: websocket");
  const auto key = header(request, "Sec-WebSocket-Key");
  if (!key || key->empty()) throw ValidationError("websocket: missing Sec-WebSocket-Key");
  return "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
         accept_key(*key) + "\r\n\r\n";
}

enum Opcode : std::uint8_t { kContinuation = 0x0, kText = 0x1, kBinary = 0x2, kClose = 0x8, kPing = 0x9, kPong = 0xA };

struct Frame {
  bool fin = true;
  std::uint8_t opcode = kText;
  std::string payload;
};

/// Server-to-client frame (unmasked). Clients pass a mask key.
inline std::string encode(const Frame& f, std::optional<std::uint32_t> mask = std::nullopt) {
  std::string out;
  out.push_back(static_cast<char>((f.fin ? 0x80 : 0x00) | (f.opcode & 0x0F)));
  const std::uint64_t n = f.payload.size();
  const unsigned char mbit = mask ? 0x80 : 0x00;
  if (n < 126) {
    out.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(static_cast<char>(mbit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(n & 0xFF));
  } else {
    out.push_back(static_cast<char>(mbit | 127));
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  }
  if (!mask) return out + f.payload;
  unsigned char key[4];
  for (int i = 0; i < 4; ++i) key[i] = static_cast<unsigned char>((*mask >> (8 * (3 - i))) & 0xFF);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(key[i]));
  for (std::size_t i = 0; i < f.payload.size(); ++i)
    out.push_back(static_cast<char>(static_cast<unsigned char>(f.payload[i]) ^ key[i % 4]));
  return out;
}

/// Consumes one frame from the front of buf if complete. Throws on frames
/// larger than max_payload.
inline std::optional<Frame> decode(std::string& buf, std::size_t max_payload = 1 << 20) {
  if (buf.size() < 2) return std::nullopt;
  const auto b0 = static_cast<unsigned char>(buf[0]);
  const auto b1 = static_cast<unsigned char>(buf[1]);
  std::size_t pos = 2;
  std::uint64_t n = b1 & 0x7F;
  if (n == 126) {
    if (buf.size() < 4) return std::nullopt;
    n = (static_cast<std::uint64_t>(static_cast<unsigned char>(buf[2])) << 8) | static_cast<unsigned char>(buf[3]);
    pos = 4;
  } else if (n == 127) {
    if (buf.size() < 10) return std::nullopt;
    n = 0;
    for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<unsigned char>(buf[2 + i]);
    pos = 10;
  }
  if (n > max_payload) throw ValidationError("websocket: frame too large");
  const bool masked = (b1 & 0x80) != 0;
  unsigned char key[4] = {0, 0, 0, 0};
  if (masked) {
    if (buf.size() < pos + 4) return std::nullopt;
    for (int i = 0; i < 4; ++i) key[i] = static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
  }
  if (buf.size() < pos + n) return std::nullopt;
  Frame f;
  f.fin = (b0 & 0x80) != 0;
  f.opcode = b0 & 0x0F;
  f.payload = buf.substr(pos, static_cast<std::size_t>(n));
  if (masked)
    for (std::size_t i = 0; i < f.payload.size(); ++i)
      f.payload[i] = static_cast<char>(static_cast<unsigned char>(f.payload[i]) ^ key[i % 4]);
  buf.erase(0, pos + static_cast<std::size_t>(n));
  return f;
}

}  // namespace mobman::ws
