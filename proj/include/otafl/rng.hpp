#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace otafl {

// Stream tags keep independent draws apart for the same (seed, round, user).
enum class Stream : std::uint32_t {
  kFading = 1,
  kPlacement = 2,
  kBatch = 3,
  kOtaNoise = 4,
  kGibbs = 5,
  kPretrain = 6,
  kTaskSetup = 7,
  kEval = 8,
};

/// Deterministic engine keyed by a list of integers.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * keys.size());
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream s, std::uint64_t round,
                                std::uint64_t user) {
  return make_rng({seed, static_cast<std::uint64_t>(s), round, user});
}

}  // namespace otafl
