#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vpki {

using Bytes = std::vector<uint8_t>;

// Thrown when a buffer cannot be decoded; carries the name of the field that
// failed so transport-level rejects pinpoint the offending element.
class DecodeError : public std::runtime_error {
public:
  explicit DecodeError(const std::string &field, const std::string &what)
      : std::runtime_error("decode error at '" + field + "': " + what),
        field_(field) {}
  const std::string &field() const { return field_; }

private:
  std::string field_;
};

inline std::string to_hex(std::span<const uint8_t> data) {
  static const char *digits = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

inline Bytes from_hex(const std::string &hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0)
    throw DecodeError("hex", "odd number of digits");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0)
      throw DecodeError("hex", "invalid digit");
    out.push_back(static_cast<uint8_t>((hi << 4) | lo));
  }
  return out;
}

// Deterministic big-endian writer. Every multi-byte integer is big-endian and
// every variable-length field carries a 4-byte length prefix, so each value
// has exactly one encoding.
class ByteWriter {
public:
  void u8(uint8_t v) { buf_.push_back(v); }

  void u16(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v >> 8));
    buf_.push_back(static_cast<uint8_t>(v));
  }

  void u32(uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8)
      buf_.push_back(static_cast<uint8_t>(v >> shift));
  }

  void u64(uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8)
      buf_.push_back(static_cast<uint8_t>(v >> shift));
  }

  // Timestamps are epoch seconds carried as u64.
  void timestamp(int64_t t) { u64(static_cast<uint64_t>(t)); }

  // Length-prefixed byte string.
  void blob(std::span<const uint8_t> data) {
    u32(static_cast<uint32_t>(data.size()));
    buf_.insert(buf_.end(), data.begin(), data.end());
  }

  void str(const std::string &s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  // Fixed-width field whose length is part of the schema (tokens, digests).
  void raw(std::span<const uint8_t> data) {
    buf_.insert(buf_.end(), data.begin(), data.end());
  }

  Bytes take() { return std::move(buf_); }
  const Bytes &peek() const { return buf_; }

private:
  Bytes buf_;
};

// Bounds-checked big-endian reader; mirrors ByteWriter. Each accessor names
// the field being read so failures identify it.
class ByteReader {
public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8(const char *field) {
    need(1, field);
    return data_[pos_++];
  }

  uint16_t u16(const char *field) {
    need(2, field);
    uint16_t v = static_cast<uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }

  uint32_t u32(const char *field) {
    need(4, field);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 4;
    return v;
  }

  uint64_t u64(const char *field) {
    need(8, field);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 8;
    return v;
  }

  int64_t timestamp(const char *field) {
    return static_cast<int64_t>(u64(field));
  }

  Bytes blob(const char *field) {
    uint32_t n = u32(field);
    need(n, field);
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }

  std::string str(const char *field) {
    Bytes b = blob(field);
    return std::string(b.begin(), b.end());
  }

  void raw(std::span<uint8_t> out, const char *field) {
    need(out.size(), field);
    std::memcpy(out.data(), data_.data() + pos_, out.size());
    pos_ += out.size();
  }

  size_t remaining() const { return data_.size() - pos_; }

  // A message with trailing bytes is malformed, not ignorable.
  void expect_end(const char *context) {
    if (pos_ != data_.size())
      throw DecodeError(context, "trailing bytes after message");
  }

private:
  void need(size_t n, const char *field) {
    if (data_.size() - pos_ < n)
      throw DecodeError(field, "buffer truncated");
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace vpki
