#pragma once

// Seed derivation and seeded tensor draws. Every stochastic component takes a
// sub-seed derived from the run's root seed and a fixed component tag.

#include <cstdint>
#include <random>
#include <string_view>

#include "cdgpa/tensor.hpp"

namespace cdgpa {

/// 64-bit FNV-1a over the bytes of `text`.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// root ⊕ hash(tag).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) { return root ^ fnv1a64(tag); }

using Rng = std::mt19937_64;

Tensor uniform_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);
Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev);

}  // namespace cdgpa
