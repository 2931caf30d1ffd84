// SPDX-License-Identifier: Apache-2.0

#include "ladder/rng.hpp"

#include <cmath>

namespace ladder {
namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

uint64_t splitmix64(uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(uint64_t seed, std::string_view purpose)
    : Rng(seed, fnv1a64(purpose), 0) {}

Rng::Rng(uint64_t seed, uint64_t stream, uint64_t counter)
    : seed_(seed), stream_(stream), counter_(counter) {
  base_ = splitmix64(seed_ ^ splitmix64(stream_));
}

Rng Rng::fork(uint64_t index) const {
  return Rng(seed_, splitmix64(stream_ ^ splitmix64(index ^ kGolden)), 0);
}

uint64_t Rng::next_u64() {
  return splitmix64(base_ + kGolden * ++counter_);
}

double Rng::uniform() {
  // 53 mantissa bits -> double in [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  return static_cast<int64_t>(uniform() * static_cast<double>(n));
}

double Rng::normal() {
  // Box-Muller; always consumes two draws so the counter advance is fixed.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();  // guard log(0)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

}  // namespace ladder
