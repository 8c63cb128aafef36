#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ecpr {

// Counter-based deterministic random stream. A draw depends only on
// (seed, label, counter), so independently labeled streams can be created in
// any order and still produce the same values on every run and platform.
class RngStream {
 public:
  RngStream(uint64_t seed, std::string_view label);

  uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();

  // Uniform strictly inside (0, 1); never returns an endpoint.
  double uniform_open();

  // Standard normal via Box-Muller.
  double normal();

  // Unbiased integer in [0, n), n >= 1.
  int64_t uniform_int(int64_t n);

 private:
  uint64_t seed_;
  std::string label_;
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace ecpr
