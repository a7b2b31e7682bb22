// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "pvtn/bytes.hpp"

namespace pvtn {

// Deterministic randomness source for a simulation run. Only raw engine
// outputs are consumed; std::uniform_int_distribution and friends are
// avoided because their output is not pinned across standard library
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Unbiased draw from [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return v % n;
  }

  bool chance(std::uint64_t num, std::uint64_t den) { return below(den) < num; }

  Bytes bytes(std::size_t n) {
    Bytes out;
    out.reserve(n);
    while (out.size() < n) {
      std::uint64_t v = eng_();
      for (int i = 0; i < 8 && out.size() < n; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (56 - 8 * i)));
      }
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace pvtn
