// SPDX-License-Identifier: Apache-2.0
#include "pvtn/bytes.hpp"

#include <algorithm>

namespace pvtn {

Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

std::string to_string_view_copy(const Bytes& b) {
  return std::string(b.begin(), b.end());
}

static const char* kHexDigits = "0123456789abcdef";

std::string to_hex(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.reserve(len * 2);
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kHexDigits[data[i] >> 4]);
    out.push_back(kHexDigits[data[i] & 0xf]);
  }
  return out;
}

std::string to_hex(const Bytes& b) { return to_hex(b.data(), b.size()); }

static int hex_val(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::optional<Bytes> from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_val(hex[i]);
    int lo = hex_val(hex[i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

static void put_u32_be(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

CanonicalWriter& CanonicalWriter::field(const std::uint8_t* data,
                                        std::size_t len) {
  put_u32_be(out_, static_cast<std::uint32_t>(len));
  out_.insert(out_.end(), data, data + len);
  return *this;
}

CanonicalWriter& CanonicalWriter::field(const Bytes& b) {
  return field(b.data(), b.size());
}

CanonicalWriter& CanonicalWriter::field(const std::string& s) {
  return field(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

CanonicalWriter& CanonicalWriter::field_u64(std::uint64_t v) {
  std::uint8_t buf[8];
  for (int i = 7; i >= 0; --i) {
    buf[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
  return field(buf, sizeof buf);
}

CanonicalWriter& CanonicalWriter::field_i64(std::int64_t v) {
  return field_u64(static_cast<std::uint64_t>(v));
}

CanonicalWriter& CanonicalWriter::field_u8(std::uint8_t v) {
  return field(&v, 1);
}

Bytes CanonicalReader::field() {
  if (!ok_ || pos_ + 4 > in_.size()) {
    ok_ = false;
    return {};
  }
  std::uint32_t len = (static_cast<std::uint32_t>(in_[pos_]) << 24) |
                      (static_cast<std::uint32_t>(in_[pos_ + 1]) << 16) |
                      (static_cast<std::uint32_t>(in_[pos_ + 2]) << 8) |
                      static_cast<std::uint32_t>(in_[pos_ + 3]);
  pos_ += 4;
  if (pos_ + len > in_.size()) {
    ok_ = false;
    return {};
  }
  Bytes out(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
            in_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
  pos_ += len;
  return out;
}

std::uint64_t CanonicalReader::field_u64() {
  Bytes b = field();
  if (!ok_ || b.size() != 8) {
    ok_ = false;
    return 0;
  }
  std::uint64_t v = 0;
  for (std::uint8_t c : b) v = (v << 8) | c;
  return v;
}

std::int64_t CanonicalReader::field_i64() {
  return static_cast<std::int64_t>(field_u64());
}

std::uint8_t CanonicalReader::field_u8() {
  Bytes b = field();
  if (!ok_ || b.size() != 1) {
    ok_ = false;
    return 0;
  }
  return b[0];
}

bool contains_subsequence(const Bytes& haystack, const Bytes& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(),
                     needle.end()) != haystack.end();
}

}  // namespace pvtn
