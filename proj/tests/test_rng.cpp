#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mdiqds/rng.hpp"

using mdiqds::SplitRng;
using mdiqds::splitmix64;

TEST_CASE("splitmix64 matches the reference sequence") {
    std::uint64_t state = 0;
    CHECK(splitmix64(state) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64(state) == 0x6e789e6aa1b965f4ULL);
    CHECK(splitmix64(state) == 0x06c45d188009454fULL);
}

TEST_CASE("equal seeds give equal streams") {
    SplitRng a(12345), b(12345);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split children are deterministic and salt-separated") {
    SplitRng root(7);
    SplitRng c1 = root.split(1), c1_again = root.split(1), c2 = root.split(2);
    CHECK(c1.seed_key() == c1_again.seed_key());
    CHECK(c1.seed_key() != c2.seed_key());
    CHECK(c1.next_u64() == c1_again.next_u64());
    // splitting is const: the root stream is untouched
    SplitRng fresh(7);
    CHECK(root.next_u64() == fresh.next_u64());
}

TEST_CASE("uniform stays in [0,1) and is not constant") {
    SplitRng rng(99);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("bernoulli honors the degenerate rates") {
    SplitRng rng(3);
    for (int i = 0; i < 50; ++i) {
        CHECK_FALSE(rng.bernoulli(0.0));
        CHECK(rng.bernoulli(1.0));
    }
}

TEST_CASE("below produces the full range and rejects zero") {
    SplitRng rng(17);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 5000; ++i) {
        const std::uint64_t v = rng.below(5);
        REQUIRE(v < 5);
        ++seen[std::size_t(v)];
    }
    for (int c : seen) CHECK(c > 700);  // each about 1000 expected
    CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

TEST_CASE("shuffle permutes without loss and is seed-stable") {
    std::vector<std::uint32_t> v(257);
    for (std::uint32_t i = 0; i < v.size(); ++i) v[i] = i;
    auto w = v;
    SplitRng(41).shuffle(v);
    {
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == w);
    }
    auto v2 = w;
    SplitRng(41).shuffle(v2);
    CHECK(v == v2);
    auto v3 = w;
    SplitRng(42).shuffle(v3);
    CHECK(v != v3);
}

TEST_CASE("binomial edge cases") {
    SplitRng rng(5);
    CHECK(rng.binomial(0, 0.3) == 0);
    CHECK(rng.binomial(100, 0.0) == 0);
    CHECK(rng.binomial(100, 1.0) == 100);
    for (int i = 0; i < 100; ++i) REQUIRE(rng.binomial(10, 0.5) <= 10);
}

TEST_CASE("binomial mean is right at large n") {
    SplitRng rng(1234);
    const std::uint64_t n = 1000000;
    const double p = 0.3;
    double total = 0.0;
    const int reps = 50;
    for (int i = 0; i < reps; ++i) total += double(rng.binomial(n, p));
    const double mean = total / reps;
    const double sigma = std::sqrt(n * p * (1 - p) / reps);
    CHECK(std::abs(mean - double(n) * p) < 5.0 * sigma);
}

TEST_CASE("binomial variance is plausible") {
    SplitRng rng(777);
    const std::uint64_t n = 100000;
    const double p = 0.2;
    const int reps = 400;
    std::vector<double> xs(reps);
    double mean = 0.0;
    for (auto& x : xs) {
        x = double(rng.binomial(n, p));
        mean += x;
    }
    mean /= reps;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= reps - 1;
    const double expect = double(n) * p * (1 - p);
    CHECK(var > 0.7 * expect);
    CHECK(var < 1.4 * expect);
}
