// SPDX-License-Identifier: Apache-2.0
//
// Counter-based splittable RNG. Draws are a pure function of
// (seed, stream, counter), so identical seeds give identical sequences on
// any platform and independent streams never interact. Streams are derived
// from purpose strings ("init", "mask", ...) and can be forked per step or
// per sample, which keeps resumed training runs bit-identical without
// serializing generator internals beyond the counter.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ladder {

class Rng {
 public:
  Rng(uint64_t seed, std::string_view purpose);
  Rng(uint64_t seed, uint64_t stream, uint64_t counter);

  // Independent substream; forking does not consume entropy from *this.
  Rng fork(uint64_t index) const;

  uint64_t next_u64();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi); // [lo, hi)
  int64_t uniform_int(int64_t n);       // [0, n)
  double normal();                      // standard normal, Box-Muller
  double normal(double mean, double stddev);

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t counter() const { return counter_; }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t base_;
  uint64_t counter_ = 0;
};

}  // namespace ladder
