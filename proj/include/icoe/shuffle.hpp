#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace icoe {

/// Fisher-Yates driven by raw mt19937_64 output, so a seed yields the same
/// permutation with every standard library (std::shuffle does not promise
/// that).
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng() % i]);
}

}  // namespace icoe
