#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace samdwich::base64 {

inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const std::uint8_t* bytes, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < n; i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < n) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < n) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < n ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string encode(const std::vector<std::uint8_t>& bytes) {
  return encode(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> decode(std::string_view s) {
  static const auto table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kAlphabet[i])] = i;
    return t;
  }();
  if (s.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + k];
      if (c == '=') {
        if (i + 4 != s.size() || k < 2) throw std::invalid_argument("base64: misplaced padding");
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad) throw std::invalid_argument("base64: data after padding");
      v[k] = table[static_cast<unsigned char>(c)];
      if (v[k] < 0) throw std::invalid_argument("base64: invalid character");
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

// Fixed-width little-endian packing for numeric payloads.

inline std::string encode_u32(const std::vector<std::uint32_t>& v) {
  std::vector<std::uint8_t> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>(v[i] >> (8 * b));
  return encode(bytes);
}

inline std::vector<std::uint32_t> decode_u32(std::string_view s) {
  const auto bytes = decode(s);
  if (bytes.size() % 4 != 0) throw std::invalid_argument("base64: u32 payload length mismatch");
  std::vector<std::uint32_t> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int b = 0; b < 4; ++b) v[i] |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
  return v;
}

inline std::string encode_f64(const std::vector<double>& v) {
  std::vector<std::uint8_t> bytes(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return encode(bytes);
}

inline std::vector<double> decode_f64(std::string_view s) {
  const auto bytes = decode(s);
  if (bytes.size() % 8 != 0) throw std::invalid_argument("base64: f64 payload length mismatch");
  std::vector<double> v(bytes.size() / 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&v[i], &bits, 8);
  }
  return v;
}

}  // namespace samdwich::base64
