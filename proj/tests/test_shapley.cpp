#include "doctest.h"

#include "ehrisk/errors.hpp"
#include "ehrisk/rng.hpp"
#include "ehrisk/shapley.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace ehrisk;

namespace {

std::vector<double> random_table(Rng &rng, std::size_t n) {
    std::vector<double> t(std::size_t{ 1 } << n);
    for (double &v : t) {
        v = rng.normal(0.0, 1.0);
    }
    return t;
}

CoalitionValue from_table(const std::vector<double> &t) {
    return [&t](Coalition s) { return t[s]; };
}

// Average marginal contribution over every ordering, written independently of
// the subset-weight formula.
std::vector<double> permutation_oracle(const std::vector<double> &t, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    std::vector<double> phi(n, 0.0);
    double count = 0;
    do {
        Coalition s = 0;
        for (const std::size_t p : order) {
            const Coalition next = s | (Coalition{ 1 } << p);
            phi[p] += t[next] - t[s];
            s = next;
        }
        count += 1;
    } while (std::next_permutation(order.begin(), order.end()));
    for (double &v : phi) {
        v /= count;
    }
    return phi;
}

}  // namespace

TEST_CASE("exact Shapley equals the permutation average") {
    Rng rng(3);
    for (std::size_t n = 1; n <= 6; ++n) {
        const auto t = random_table(rng, n);
        const auto phi = exact_shapley(from_table(t), n);
        const auto oracle = permutation_oracle(t, n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(phi[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("hand-worked three player game") {
    // v: {}=0 {0}=1 {1}=2 {2}=0 {0,1}=6 {0,2}=1 {1,2}=2 {0,1,2}=9
    const std::vector<double> t{ 0, 1, 2, 6, 0, 1, 2, 9 };
    const auto phi = exact_shapley(from_table(t), 3);
    // player 2 adds 0 everywhere except {0,1} -> N (+3), weight 2/6
    CHECK(phi[2] == doctest::Approx(1.0));
    // player 0 marginals (1, 4, 1, 7) with weights (2, 1, 1, 2) / 6
    CHECK(phi[0] == doctest::Approx(3.5));
    CHECK(phi[1] == doctest::Approx(4.5));
}

TEST_CASE("additive game gives each player its own weight") {
    Rng rng(5);
    for (std::size_t n : { 1u, 4u, 9u, 15u }) {
        std::vector<double> c(n);
        for (double &v : c) {
            v = rng.uniform(-2.0, 2.0);
        }
        const auto v = [&c](Coalition s) {
            double total = 0.7;
            for (std::size_t i = 0; i < c.size(); ++i) {
                if (s >> i & 1u) {
                    total += c[i];
                }
            }
            return total;
        };
        const auto exact = exact_shapley(v, n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(exact[i] == doctest::Approx(c[i]).epsilon(1e-10));
        }
        // every permutation yields the same marginal, so sampling is exact too
        const auto sampled = sampled_shapley(v, n, 7, 1);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(sampled.phi[i] == doctest::Approx(c[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("Shapley axioms hold on random games") {
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        auto t = random_table(rng, n);
        const std::size_t dummy = rng.below(n);
        const Coalition dbit = Coalition{ 1 } << dummy;
        for (Coalition s = 0; s < t.size(); ++s) {
            if (s & dbit) {
                t[s] = t[s & ~dbit];
            }
        }
        const auto phi = exact_shapley(from_table(t), n);
        CHECK(std::accumulate(phi.begin(), phi.end(), 0.0) == doctest::Approx(t.back() - t.front()).epsilon(1e-9));
        CHECK(std::abs(phi[dummy]) < 1e-9);

        // symmetry: make players a and b interchangeable
        auto sym = random_table(rng, n);
        const std::size_t a = 0;
        const std::size_t b = n - 1;
        for (Coalition s = 0; s < sym.size(); ++s) {
            const bool in_a = s >> a & 1u;
            const bool in_b = s >> b & 1u;
            if (in_a != in_b) {
                const Coalition swapped = s ^ (Coalition{ 1 } << a) ^ (Coalition{ 1 } << b);
                sym[std::max(s, swapped)] = sym[std::min(s, swapped)];
            }
        }
        const auto ps = exact_shapley(from_table(sym), n);
        CHECK(std::abs(ps[a] - ps[b]) < 1e-9);

        // linearity
        const auto w = random_table(rng, n);
        const double alpha = rng.uniform(-3.0, 3.0);
        const double beta = rng.uniform(-3.0, 3.0);
        std::vector<double> combo(t.size());
        for (std::size_t s = 0; s < t.size(); ++s) {
            combo[s] = alpha * t[s] + beta * w[s];
        }
        const auto pw = exact_shapley(from_table(w), n);
        const auto pc = exact_shapley(from_table(combo), n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(pc[i] - (alpha * phi[i] + beta * pw[i])) < 1e-9);
        }
    }
}

TEST_CASE("enumerating every ordering reproduces the exact values") {
    Rng rng(2);
    const auto t = random_table(rng, 3);
    const SampledShapley s = sampled_shapley(from_table(t), 3, 6, 99);
    CHECK(s.exhaustive);
    CHECK(s.permutations == 6);
    const auto exact = exact_shapley(from_table(t), 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(s.phi[i] == doctest::Approx(exact[i]).epsilon(1e-12));
        CHECK(s.standard_error[i] == 0.0);
    }
}

TEST_CASE("sampled Shapley: efficiency, determinism, convergence") {
    Rng rng(8);
    const std::size_t n = 10;
    std::vector<double> w(n);
    for (double &v : w) {
        v = rng.normal(0.0, 1.0);
    }
    const auto v = [&w](Coalition s) {
        double z = -0.5;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (s >> i & 1u) {
                z += w[i];
            }
        }
        // an interaction between players 0 and 1
        if ((s & 3u) == 3u) {
            z += 1.5;
        }
        return 1.0 / (1.0 + std::exp(-z));
    };
    const auto exact = exact_shapley(v, n);
    const SampledShapley a = sampled_shapley(v, n, 2000, 7);
    const SampledShapley b = sampled_shapley(v, n, 2000, 7);
    CHECK(a.phi == b.phi);
    CHECK_FALSE(a.exhaustive);
    CHECK(std::accumulate(a.phi.begin(), a.phi.end(), 0.0) == doctest::Approx(v((Coalition{ 1 } << n) - 1) - v(0)).epsilon(1e-9));
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, std::abs(a.phi[i] - exact[i]));
    }
    CHECK(worst < 0.05);

    const SampledShapley c = sampled_shapley(v, n, 2000, 8);
    CHECK(c.phi != a.phi);
}

TEST_CASE("standard error shrinks like one over root n") {
    Rng rng(4);
    const auto t = random_table(rng, 9);
    const auto few = sampled_shapley(from_table(t), 9, 200, 1);
    const auto many = sampled_shapley(from_table(t), 9, 3200, 1);
    double ratio = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        ratio += many.standard_error[i] / few.standard_error[i];
    }
    ratio /= 9.0;
    CHECK(ratio == doctest::Approx(0.25).epsilon(0.2));

    const auto one = sampled_shapley(from_table(t), 9, 1, 1);
    CHECK(std::isnan(one.standard_error[0]));
}

TEST_CASE("capacity limits and bad arguments") {
    const auto zero = [](Coalition) { return 0.0; };
    CHECK_THROWS_AS(exact_shapley(zero, 16), CapacityError);
    CHECK_NOTHROW(exact_shapley(zero, 15));
    CHECK_THROWS_AS(sampled_shapley(zero, 65, 10, 1), CapacityError);
    CHECK_THROWS_AS(sampled_shapley(zero, 4, 0, 1), InvalidInputError);
    const std::vector<double> short_table{ 0.0, 1.0, 2.0 };
    CHECK_THROWS_AS(shapley_from_table(short_table, 2), InvalidInputError);
    CHECK(exact_shapley(zero, 0).empty());
}
