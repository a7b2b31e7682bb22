// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace pvtn {

using Bytes = std::vector<std::uint8_t>;

Bytes to_bytes(const std::string& s);
std::string to_string_view_copy(const Bytes& b);

std::string to_hex(const std::uint8_t* data, std::size_t len);
std::string to_hex(const Bytes& b);
std::optional<Bytes> from_hex(const std::string& hex);

// Canonical encoding used for every signed or hashed structure: fields are
// appended in declaration order, each as a 4-byte big-endian length followed
// by the raw bytes. Integers are first widened to fixed-size big-endian.
class CanonicalWriter {
 public:
  CanonicalWriter& field(const Bytes& b);
  CanonicalWriter& field(const std::string& s);
  CanonicalWriter& field(const std::uint8_t* data, std::size_t len);
  CanonicalWriter& field_u64(std::uint64_t v);
  CanonicalWriter& field_i64(std::int64_t v);
  CanonicalWriter& field_u8(std::uint8_t v);

  const Bytes& bytes() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

// Mirror of CanonicalWriter. Reading past the end or hitting a truncated
// length prefix flips the reader into a failed state; callers check ok()
// once after pulling all fields.
class CanonicalReader {
 public:
  explicit CanonicalReader(const Bytes& in) : in_(in) {}

  Bytes field();
  std::uint64_t field_u64();
  std::int64_t field_i64();
  std::uint8_t field_u8();

  bool ok() const { return ok_ && pos_ == in_.size(); }
  bool ok_partial() const { return ok_; }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const Bytes& in_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

bool contains_subsequence(const Bytes& haystack, const Bytes& needle);

}  // namespace pvtn
