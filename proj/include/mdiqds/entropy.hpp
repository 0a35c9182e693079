#pragma once

#include <cmath>
#include <stdexcept>

namespace mdiqds {

// Binary Shannon entropy in bits, h(0) = h(1) = 0.
inline double binary_entropy(double x) {
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("binary_entropy: argument outside [0,1]");
    if (x == 0.0 || x == 1.0) return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

// Inverse of binary_entropy restricted to [0, 1/2]; bisection to ~1e-15.
inline double binary_entropy_inverse(double y) {
    if (y < 0.0 || y > 1.0) throw std::invalid_argument("binary_entropy_inverse: argument outside [0,1]");
    if (y == 0.0) return 0.0;
    if (y == 1.0) return 0.5;
    double lo = 0.0, hi = 0.5;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (binary_entropy(mid) < y)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// KL divergence D(q || p) between Bernoulli(q) and Bernoulli(p), in nats.
// Infinite when q puts mass where p has none.
inline double kl_bernoulli(double q, double p) {
    if (q < 0.0 || q > 1.0 || p < 0.0 || p > 1.0)
        throw std::invalid_argument("kl_bernoulli: arguments outside [0,1]");
    auto term = [](double a, double b) {
        if (a == 0.0) return 0.0;
        if (b == 0.0) return std::numeric_limits<double>::infinity();
        return a * std::log(a / b);
    };
    return term(q, p) + term(1.0 - q, 1.0 - p);
}

}  // namespace mdiqds
