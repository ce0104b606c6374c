#pragma once

#include <cstdint>
#include <random>

namespace cmhe {

// Named sub-streams derived from a single command seed.
enum class Stream : std::uint32_t {
  init = 1,
  minibatch = 2,
  hard_posterior = 3,
  bootstrap = 4,
  split = 5,
  simulate = 6,
};

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, Stream stream);

// Uniform draw on the open interval (0, 1).
double uniform_open(Rng& rng);

// Inverse-CDF draw from unnormalized nonnegative weights; returns an index.
template <typename Weights>
int sample_categorical(const Weights& weights, Rng& rng) {
  double total = 0.0;
  const int n = static_cast<int>(weights.size());
  for (int i = 0; i < n; ++i) total += weights[i];
  const double u = uniform_open(rng) * total;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // round-off: fall back to the last index with positive mass
  for (int i = n - 1; i >= 0; --i) {
    if (weights[i] > 0.0) return i;
  }
  return n - 1;
}

}  // namespace cmhe
