/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <random>

namespace efdmvc {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent sub-seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Named streams so every consumer of the master seed draws independently.
enum class SeedStream : std::uint64_t {
  data = 1,
  partition = 2,
  views = 3,
  init = 4,
  client = 5,
  eval = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream s, std::uint64_t index = 0) {
  return mix_seed(mix_seed(master, static_cast<std::uint64_t>(s)), index);
}

}  // namespace efdmvc
