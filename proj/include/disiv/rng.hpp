#pragma once

#include <cstdint>
#include <random>

#include "disiv/tensor.hpp"

namespace disiv {

/// Independent random streams derived from one master seed, one per purpose,
/// so that each generated quantity is reproducible on its own.
enum class Stream : std::uint32_t {
  Graph = 1,
  Features = 2,
  Projection = 3,
  Unobserved = 4,
  Treatment = 5,
  OutcomeNoise = 6,
  Splits = 7,
  Weights = 8,
  Init = 9,
  Reparam = 10,
};

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, Stream purpose, std::uint64_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(sub),
                    static_cast<std::uint32_t>(sub >> 32)};
  return Rng(seq);
}

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace disiv
