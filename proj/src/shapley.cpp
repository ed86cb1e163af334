#include "ehrisk/shapley.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

namespace ehrisk {

namespace {

double factorial(std::size_t n) {
    double f = 1.0;
    for (std::size_t i = 2; i <= n; ++i) {
        f *= static_cast<double>(i);
    }
    return f;
}

}  // namespace

std::vector<double> shapley_from_table(std::span<const double> values, std::size_t players) {
    if (players > kMaxExactPlayers) {
        throw CapacityError("exact Shapley supports at most " + std::to_string(kMaxExactPlayers) + " groups; use sampled mode for " + std::to_string(players));
    }
    const std::size_t coalitions = std::size_t{ 1 } << players;
    if (values.size() != coalitions) {
        throw InvalidInputError("value table must have 2^n entries");
    }
    std::vector<double> weight(players, 0.0);
    const double n_fact = factorial(players);
    for (std::size_t s = 0; s < players; ++s) {
        weight[s] = factorial(s) * factorial(players - s - 1) / n_fact;
    }
    std::vector<double> phi(players, 0.0);
    for (std::size_t i = 0; i < players; ++i) {
        const Coalition bit = Coalition{ 1 } << i;
        for (Coalition s = 0; s < coalitions; ++s) {
            if (s & bit) {
                continue;
            }
            phi[i] += weight[static_cast<std::size_t>(std::popcount(s))] * (values[s | bit] - values[s]);
        }
    }
    return phi;
}

std::vector<double> exact_shapley(const CoalitionValue &value, std::size_t players) {
    if (players > kMaxExactPlayers) {
        throw CapacityError("exact Shapley supports at most " + std::to_string(kMaxExactPlayers) + " groups; use sampled mode for " + std::to_string(players));
    }
    const std::size_t coalitions = std::size_t{ 1 } << players;
    std::vector<double> table(coalitions);
    for (Coalition s = 0; s < coalitions; ++s) {
        table[s] = value(s);
    }
    return shapley_from_table(table, players);
}

SampledShapley sampled_shapley(const CoalitionValue &value, std::size_t players, std::size_t n_permutations, std::uint64_t seed) {
    if (n_permutations == 0) {
        throw InvalidInputError("n_permutations must be at least 1");
    }
    if (players > kMaxSampledPlayers) {
        throw CapacityError("sampled Shapley supports at most " + std::to_string(kMaxSampledPlayers) + " groups");
    }
    SampledShapley out;
    out.phi.assign(players, 0.0);
    out.standard_error.assign(players, 0.0);
    if (players == 0) {
        return out;
    }

    std::unordered_map<Coalition, double> memo;
    auto v = [&](Coalition s) {
        const auto it = memo.find(s);
        if (it != memo.end()) {
            return it->second;
        }
        const double result = value(s);
        memo.emplace(s, result);
        return result;
    };

    // Welford accumulators per player
    std::vector<double> mean(players, 0.0);
    std::vector<double> m2(players, 0.0);
    std::size_t count = 0;
    auto walk = [&](const std::vector<std::size_t> &order) {
        ++count;
        Coalition s = 0;
        double previous = v(s);
        for (const std::size_t player : order) {
            s |= Coalition{ 1 } << player;
            const double current = v(s);
            const double delta = current - previous;
            const double d1 = delta - mean[player];
            mean[player] += d1 / static_cast<double>(count);
            m2[player] += d1 * (delta - mean[player]);
            previous = current;
        }
    };

    std::vector<std::size_t> order(players);
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    const bool enumerate = players <= kMaxEnumeratedPlayers && static_cast<double>(n_permutations) >= factorial(players);
    if (enumerate) {
        do {
            walk(order);
        } while (std::next_permutation(order.begin(), order.end()));
        out.exhaustive = true;
    } else {
        Rng rng(seed);
        for (std::size_t p = 0; p < n_permutations; ++p) {
            rng.shuffle(order.begin(), order.end());
            walk(order);
        }
    }
    out.permutations = count;
    out.phi = mean;
    for (std::size_t i = 0; i < players; ++i) {
        if (out.exhaustive) {
            out.standard_error[i] = 0.0;
        } else if (count < 2) {
            out.standard_error[i] = std::numeric_limits<double>::quiet_NaN();
        } else {
            out.standard_error[i] = std::sqrt(m2[i] / static_cast<double>(count - 1) / static_cast<double>(count));
        }
    }
    return out;
}

}  // namespace ehrisk
