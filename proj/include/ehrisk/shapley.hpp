#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ehrisk {

/// Bit i set means player i is present.
using Coalition = std::uint64_t;
using CoalitionValue = std::function<double(Coalition)>;

/// 2^15 coalition evaluations is the hard cap for exact enumeration.
inline constexpr std::size_t kMaxExactPlayers = 15;
inline constexpr std::size_t kMaxSampledPlayers = 64;

/// phi_i = sum over S not containing i of |S|!(n-|S|-1)!/n! [v(S u {i}) - v(S)],
/// from a table of all 2^n coalition values indexed by bitmask.
std::vector<double> shapley_from_table(std::span<const double> values, std::size_t players);

/// Evaluates `value` on every coalition, then applies shapley_from_table.
/// Throws CapacityError when players > kMaxExactPlayers.
std::vector<double> exact_shapley(const CoalitionValue &value, std::size_t players);

struct SampledShapley {
    std::vector<double> phi;
    /// Standard error of each phi over permutations; 0 when enumeration was exhaustive,
    /// NaN with a single sampled permutation.
    std::vector<double> standard_error;
    std::size_t permutations = 0;
    bool exhaustive = false;
};

/// Largest player count for which a request of >= n! permutations enumerates every
/// ordering instead of sampling.
inline constexpr std::size_t kMaxEnumeratedPlayers = 8;

/// Monte-Carlo average of marginal contributions over seeded uniform random
/// orderings. When n_permutations >= n! and n <= kMaxEnumeratedPlayers, every
/// ordering is visited once and the result equals exact_shapley.
/// Coalition values are memoized within one call.
SampledShapley sampled_shapley(const CoalitionValue &value, std::size_t players, std::size_t n_permutations, std::uint64_t seed);

}  // namespace ehrisk
