// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Integer range coder over QuantizedCdf tables, 32-bit state with 2^16
// probability precision and byte-wise renormalization. Pure integer
// arithmetic, so output bytes are identical on every platform.
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ocmc/entropy.hpp"

namespace ocmc {

using ByteStream = std::vector<std::uint8_t>;

// Interval arithmetic: the coder keeps [low, low+range) nested inside the
// initial [0, 2^32) window. Pending 0xFF bytes absorb carries from low;
// since the true code value never reaches 2^32, the sentinel byte ahead of
// them stays zero and is dropped from the stream.
class RangeEncoder {
 public:
  void encode(int sym, const QuantizedCdf& t) {
    if (finished_) throw std::logic_error("RangeEncoder: already finished");
    if (sym < 0 || sym >= t.symbols())
      throw std::invalid_argument("RangeEncoder: symbol outside table");
    const std::uint64_t r = range_;
    const std::uint64_t lo = (r * t.lo(sym)) >> 16;
    const std::uint64_t hi = (r * t.hi(sym)) >> 16;
    low_ += lo;
    range_ = static_cast<std::uint32_t>(hi - lo);
    while (range_ < (1u << 24)) {
      range_ <<= 8;
      shift_low();
    }
  }

  ByteStream finish() {
    if (finished_) throw std::logic_error("RangeEncoder: already finished");
    for (int i = 0; i < 5; ++i) shift_low();
    finished_ = true;
    return std::move(out_);
  }

 private:
  void put(std::uint8_t b) {
    if (sentinel_pending_) {
      if (b != 0) throw std::logic_error("RangeEncoder: sentinel byte not zero");
      sentinel_pending_ = false;
      return;
    }
    out_.push_back(b);
  }

  void shift_low() {
    if (low_ < 0xFF000000ull || low_ > 0xFFFFFFFFull) {
      const std::uint8_t carry = static_cast<std::uint8_t>(low_ >> 32);
      put(static_cast<std::uint8_t>(cache_ + carry));
      while (--cache_size_ != 0)
        put(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ << 8) & 0xFFFFFFFFull;
  }

  ByteStream out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool sentinel_pending_ = true;
  bool finished_ = false;
};

class RangeDecoder {
 public:
  RangeDecoder(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | read_byte();
  }
  explicit RangeDecoder(const ByteStream& bytes) : RangeDecoder(bytes.data(), bytes.size()) {}

  int decode(const QuantizedCdf& t) {
    const std::uint64_t r = range_;
    auto bound = [&](std::uint32_t cum) {
      return static_cast<std::uint32_t>((r * cum) >> 16);
    };
    int a = 0;
    int b = t.symbols();
    while (b - a > 1) {
      const int mid = (a + b) / 2;
      if (bound(t.cum[static_cast<std::size_t>(mid)]) <= code_)
        a = mid;
      else
        b = mid;
    }
    const std::uint32_t lo = bound(t.lo(a));
    code_ -= lo;
    range_ = bound(t.hi(a)) - lo;
    while (range_ < (1u << 24)) {
      range_ <<= 8;
      code_ = (code_ << 8) | read_byte();
    }
    return a;
  }

  std::size_t bytes_consumed() const { return pos_; }

 private:
  std::uint8_t read_byte() {
    if (pos_ >= size_)
      throw std::runtime_error("RangeDecoder: truncated stream");
    return data_[pos_++];
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

using TableFor = std::function<const QuantizedCdf&(std::size_t index)>;

// Codes integer values (not raw symbol indexes); the per-element table
// supplies the value range. All values are validated before any output.
inline ByteStream rc_encode(const std::vector<long>& values, const TableFor& table_for) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const QuantizedCdf& t = table_for(i);
    if (values[i] < t.v_min || values[i] > t.v_max)
      throw std::invalid_argument("rc_encode: value outside table range");
  }
  RangeEncoder enc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const QuantizedCdf& t = table_for(i);
    enc.encode(static_cast<int>(values[i] - t.v_min), t);
  }
  return enc.finish();
}

inline ByteStream rc_encode(const std::vector<long>& values, const QuantizedCdf& table) {
  return rc_encode(values, [&table](std::size_t) -> const QuantizedCdf& { return table; });
}

inline std::vector<long> rc_decode(const ByteStream& bytes, const TableFor& table_for,
                                   std::size_t count) {
  RangeDecoder dec(bytes);
  std::vector<long> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const QuantizedCdf& t = table_for(i);
    values[i] = t.v_min + dec.decode(t);
  }
  if (dec.bytes_consumed() != bytes.size())
    throw std::runtime_error("rc_decode: stream length mismatch");
  return values;
}

inline std::vector<long> rc_decode(const ByteStream& bytes, const QuantizedCdf& table,
                                   std::size_t count) {
  return rc_decode(bytes, [&table](std::size_t) -> const QuantizedCdf& { return table; }, count);
}

}  // namespace ocmc
