#pragma once

// The one documented random stream used for initialization and shuffling:
// std::mt19937_64 (output sequence fixed by the C++ standard) with
//   uniform01  = (next() >> 11) * 2^-53
//   shuffle    = Fisher-Yates from the back, j = next() % (i + 1)

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace epg {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace epg
