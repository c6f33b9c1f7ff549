// Copyright (c) 2026 the hs2s authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HS2S_RNG_HPP
#define HS2S_RNG_HPP

#include <cstdint>
#include <random>

namespace hs2s {

// Deterministic RNG wrapper. All randomness in the project flows through
// explicit instances of this class; there is no hidden global state.
// The [0,1) mapping is fixed here (rather than relying on
// std::uniform_real_distribution) so that streams are reproducible
// independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1), 53 bits of entropy.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive on both ends.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives a seed for an independent child stream.
  uint64_t fork_seed() { return next_u64() ^ 0x9e3779b97f4a7c15ULL; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hs2s

#endif  // HS2S_RNG_HPP
