#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "mdiqds/entropy.hpp"

namespace mdiqds {

enum class Direction { lower, upper };

// Hoeffding deviation for a sum of n Bernoulli trials at failure level eps:
// P(|sum - mean| >= delta) with delta = sqrt((n/2) ln(1/eps)) is at most eps
// one-sided.
inline double hoeffding_delta(double n, double eps) {
    if (eps <= 0.0 || eps > 1.0) throw std::invalid_argument("hoeffding_delta: eps outside (0,1]");
    if (n < 0.0) throw std::invalid_argument("hoeffding_delta: negative trial count");
    return std::sqrt(0.5 * n * std::log(1.0 / eps));
}

// One-sided confidence bound on the expected count given an observed count of
// n trials; result clamped to [0, n].
inline double concentration_bound(double observed, double n, double eps, Direction dir) {
    if (observed < 0.0 || observed > n)
        throw std::invalid_argument("concentration_bound: observed outside [0,n]");
    const double d = hoeffding_delta(n, eps);
    double v = dir == Direction::lower ? observed - d : observed + d;
    return std::clamp(v, 0.0, n);
}

// One-sided Chernoff bound in KL form: P(sum >= k) <= exp(-n KL(k/n || p))
// whenever k/n >= p, and symmetrically for the lower tail. Inverting the
// exponent at eps gives the tightest rate consistent with the observation,
// which is far sharper than the Hoeffding radius when the rate is small.
// Returns a count bound like concentration_bound.
inline double kl_bound(double observed, double n, double eps, Direction dir) {
    if (eps <= 0.0 || eps > 1.0) throw std::invalid_argument("kl_bound: eps outside (0,1]");
    if (n <= 0.0) throw std::invalid_argument("kl_bound: trial count must be positive");
    if (observed < 0.0 || observed > n)
        throw std::invalid_argument("kl_bound: observed outside [0,n]");
    const double a = observed / n;
    const double budget = std::log(1.0 / eps) / n;
    double lo, hi;
    if (dir == Direction::upper) {
        lo = a;
        hi = 1.0;
        if (kl_bernoulli(a, hi) <= budget) return n;
    } else {
        lo = 0.0;
        hi = a;
        if (kl_bernoulli(a, lo) <= budget) return 0.0;
    }
    // kl_bernoulli(a, .) falls toward p = a from either side, so the feasible
    // region is an interval touching a and bisection applies.
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const bool feasible = kl_bernoulli(a, mid) <= budget;
        if (dir == Direction::upper) {
            (feasible ? lo : hi) = mid;
        } else {
            (feasible ? hi : lo) = mid;
        }
    }
    return n * (dir == Direction::upper ? lo : hi);
}

// Multiplicative Chernoff deviations for a count with the given expected
// value: the lower tail satisfies P(X <= m - d) <= exp(-d^2 / (2m)), the
// upper tail the Bernstein form P(X >= m + d) <= exp(-d^2 / (2(m + d/3))).
// Both shrink with sqrt(m) instead of sqrt(n), which matters when the rate
// is tiny.
inline double chernoff_lower_delta(double mean, double eps) {
    if (eps <= 0.0 || eps > 1.0)
        throw std::invalid_argument("chernoff_lower_delta: eps outside (0,1]");
    if (mean < 0.0) throw std::invalid_argument("chernoff_lower_delta: negative mean");
    return std::min(mean, std::sqrt(2.0 * mean * std::log(1.0 / eps)));
}

inline double chernoff_upper_delta(double mean, double eps) {
    if (eps <= 0.0 || eps > 1.0)
        throw std::invalid_argument("chernoff_upper_delta: eps outside (0,1]");
    if (mean < 0.0) throw std::invalid_argument("chernoff_upper_delta: negative mean");
    const double l = std::log(1.0 / eps);
    return l / 3.0 + std::sqrt(l * l / 9.0 + 2.0 * l * mean);
}

// Serfling-style without-replacement bound: upper bound on the error rate of
// the kept portion given the observed test portion.
inline double serfling_bound(std::uint64_t test_errors, std::uint64_t test_size,
                             std::uint64_t kept_size, double eps) {
    if (test_size == 0) throw std::invalid_argument("serfling_bound: empty test set");
    if (kept_size == 0) throw std::invalid_argument("serfling_bound: empty kept set");
    if (test_errors > test_size) throw std::invalid_argument("serfling_bound: errors exceed test size");
    if (eps <= 0.0 || eps > 1.0) throw std::invalid_argument("serfling_bound: eps outside (0,1]");
    const double nt = static_cast<double>(test_size);
    const double nk = static_cast<double>(kept_size);
    const double rate = static_cast<double>(test_errors) / nt;
    const double dev = std::sqrt((nk + 1.0) * std::log(1.0 / eps) / (2.0 * nt * nk));
    return std::min(1.0, rate + dev);
}

// log of the binomial pmf, stable for large n.
inline double log_binom_pmf(std::uint64_t k, std::uint64_t n, double p) {
    if (k > n) return -std::numeric_limits<double>::infinity();
    if (p <= 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return k == n ? 0.0 : -std::numeric_limits<double>::infinity();
    const double nd = static_cast<double>(n), kd = static_cast<double>(k);
    return std::lgamma(nd + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(nd - kd + 1.0) +
           kd * std::log(p) + (nd - kd) * std::log(1.0 - p);
}

inline double binom_cdf(std::uint64_t k, std::uint64_t n, double p) {
    double acc = 0.0;
    for (std::uint64_t i = 0; i <= std::min(k, n); ++i) acc += std::exp(log_binom_pmf(i, n, p));
    return std::min(1.0, acc);
}

// Exact Clopper-Pearson two-sided interval for k successes out of n at the
// given confidence level, by bisection on the binomial CDF.
inline std::pair<double, double> clopper_pearson(std::uint64_t k, std::uint64_t n, double confidence) {
    if (n == 0) throw std::invalid_argument("clopper_pearson: n must be positive");
    if (k > n) throw std::invalid_argument("clopper_pearson: k > n");
    const double alpha = 1.0 - confidence;
    auto bisect = [&](auto f) {
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 100; ++i) {
            double mid = 0.5 * (lo + hi);
            if (f(mid))
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    double lower = 0.0, upper = 1.0;
    if (k > 0)
        lower = bisect([&](double p) { return 1.0 - binom_cdf(k - 1, n, p) < alpha / 2.0; });
    if (k < n)
        upper = bisect([&](double p) { return binom_cdf(k, n, p) > alpha / 2.0; });
    return {lower, upper};
}

}  // namespace mdiqds
