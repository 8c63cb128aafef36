#include "ecpr/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ecpr {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

uint64_t splitmix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed, std::string_view label)
    : seed_(seed), label_(label) {
  key_ = splitmix64(seed ^ splitmix64(fnv1a(label)));
}

uint64_t RngStream::next_u64() {
  return splitmix64(key_ + kGolden * ++counter_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
  // Offset by half an ulp of the grid so 0 and 1 are unreachable.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int64_t RngStream::uniform_int(int64_t n) {
  if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<int64_t>(v % un);
}

}  // namespace ecpr
