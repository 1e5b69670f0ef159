// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Bitstream container: fixed 88-byte header followed by the six entropy
// coded streams in decode order. All integers little-endian.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocmc/range_coder.hpp"

namespace ocmc {

// Storage order equals decode order: the hyper latent pair first, then the
// low-resolution latents whose parameters each stream ahead provides.
enum StreamId : int { kStreamZH = 0, kStreamZL, kStreamY1L, kStreamY1H, kStreamYL, kStreamYH };
inline constexpr int kStreamCount = 6;
inline constexpr const char* kStreamNames[kStreamCount] = {"zH", "zL", "y1L", "y1H", "yL", "yH"};

struct StreamDesc {
  std::int32_t v_min = 0;
  std::int32_t v_max = -1;
  ByteStream bytes;
};

struct Container {
  std::uint8_t version = 1;
  std::uint32_t width = 0;   // true dims before padding
  std::uint32_t height = 0;
  std::uint8_t hyper_scheme = 1;
  std::uint16_t n = 0;  // model filter count
  std::array<StreamDesc, kStreamCount> streams;

  static constexpr std::size_t kHeaderSize = 4 + 1 + 4 + 4 + 1 + 2 + 6 * 12;

  std::size_t payload_bytes() const {
    std::size_t total = 0;
    for (const auto& s : streams) total += s.bytes.size();
    return total;
  }
};

inline std::vector<std::uint8_t> serialize(const Container& c) {
  std::vector<std::uint8_t> out;
  out.reserve(Container::kHeaderSize + c.payload_bytes());
  auto u8 = [&](std::uint8_t v) { out.push_back(v); };
  auto u16 = [&](std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (char m : {'O', 'C', 'M', 'C'}) u8(static_cast<std::uint8_t>(m));
  u8(c.version);
  u32(c.width);
  u32(c.height);
  u8(c.hyper_scheme);
  u16(c.n);
  for (const auto& s : c.streams) {
    u32(static_cast<std::uint32_t>(s.v_min));
    u32(static_cast<std::uint32_t>(s.v_max));
    u32(static_cast<std::uint32_t>(s.bytes.size()));
  }
  for (const auto& s : c.streams) out.insert(out.end(), s.bytes.begin(), s.bytes.end());
  return out;
}

inline Container parse(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw std::runtime_error("container: truncated file");
  };
  auto u8 = [&]() -> std::uint8_t {
    need(1);
    return bytes[pos++];
  };
  auto u16 = [&]() -> std::uint16_t {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes[pos++]) << (8 * i);
    return v;
  };
  auto u32 = [&]() -> std::uint32_t {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  };

  need(4);
  if (bytes[0] != 'O' || bytes[1] != 'C' || bytes[2] != 'M' || bytes[3] != 'C')
    throw std::runtime_error("container: bad magic");
  pos = 4;
  Container c;
  c.version = u8();
  if (c.version != 1) throw std::runtime_error("container: unsupported version");
  c.width = u32();
  c.height = u32();
  c.hyper_scheme = u8();
  if (c.hyper_scheme != 1 && c.hyper_scheme != 2)
    throw std::runtime_error("container: invalid hyper scheme");
  c.n = u16();
  if (c.width == 0 || c.height == 0 || c.n == 0 || c.n % 2 != 0)
    throw std::runtime_error("container: invalid header fields");
  std::size_t total_payload = 0;
  for (auto& s : c.streams) {
    s.v_min = static_cast<std::int32_t>(u32());
    s.v_max = static_cast<std::int32_t>(u32());
    if (s.v_min > s.v_max) throw std::runtime_error("container: empty symbol range");
    const std::uint32_t len = u32();
    s.bytes.resize(len);
    total_payload += len;
  }
  if (bytes.size() - pos != total_payload)
    throw std::runtime_error("container: length mismatch");
  for (auto& s : c.streams) {
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
              bytes.begin() + static_cast<std::ptrdiff_t>(pos + s.bytes.size()),
              s.bytes.begin());
    pos += s.bytes.size();
  }
  return c;
}

}  // namespace ocmc
