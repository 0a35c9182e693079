#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mdiqds {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** stream, seeded through splitmix64. Child streams are derived
// with split(salt); equal (seed, salt-path) pairs always give equal streams.
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : key_(seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    SplitRng split(std::uint64_t salt) const {
        std::uint64_t sm = key_ ^ (salt * 0x9e3779b97f4a7c15ULL) ^ 0xa5a5a5a55a5a5a5aULL;
        return SplitRng(splitmix64(sm));
    }

    std::uint64_t seed_key() const { return key_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) {
        if (p <= 0.0) return false;
        if (p >= 1.0) return true;
        return uniform() < p;
    }

    // Unbiased uniform integer in [0, n) via rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("SplitRng::below: n must be positive");
        const std::uint64_t threshold = -n % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Exact binomial draw. Small n counts Bernoulli trials; large n inverts the
    // CDF outward from the mode with incremental pmf ratios, so the expected
    // cost is O(sqrt(n p q)) and the draw consumes exactly one uniform.
    std::uint64_t binomial(std::uint64_t n, double p) {
        if (n == 0 || p <= 0.0) return 0;
        if (p >= 1.0) return n;
        if (p > 0.5) return n - binomial(n, 1.0 - p);
        if (n <= 64) {
            std::uint64_t k = 0;
            for (std::uint64_t i = 0; i < n; ++i) k += bernoulli(p) ? 1 : 0;
            return k;
        }
        const double q = 1.0 - p;
        const double nd = static_cast<double>(n);
        auto mode = static_cast<std::uint64_t>((nd + 1.0) * p);
        if (mode > n) mode = n;
        const double md = static_cast<double>(mode);
        double log_pmf_mode = std::lgamma(nd + 1.0) - std::lgamma(md + 1.0) -
                              std::lgamma(nd - md + 1.0) + md * std::log(p) +
                              (nd - md) * std::log(q);
        const double pmf_mode = std::exp(log_pmf_mode);
        double u = uniform();

        double up_pmf = pmf_mode, down_pmf = pmf_mode;
        std::uint64_t up_k = mode, down_k = mode;
        u -= pmf_mode;
        if (u < 0.0) return mode;
        const double ratio = p / q;
        for (;;) {
            bool moved = false;
            if (up_k < n && up_pmf > 0.0) {
                const double uk = static_cast<double>(up_k);
                up_pmf *= (nd - uk) / (uk + 1.0) * ratio;
                ++up_k;
                u -= up_pmf;
                if (u < 0.0) return up_k;
                moved = true;
            }
            if (down_k > 0 && down_pmf > 0.0) {
                const double dk = static_cast<double>(down_k);
                down_pmf *= dk / (nd - dk + 1.0) / ratio;
                --down_k;
                u -= down_pmf;
                if (u < 0.0) return down_k;
                moved = true;
            }
            // Floating residue can strand a tiny tail of u; the mode is the
            // distributionally closest answer at that point.
            if (!moved || (up_pmf < 1e-320 && down_pmf < 1e-320)) return mode;
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    std::uint64_t key_;
};

}  // namespace mdiqds
