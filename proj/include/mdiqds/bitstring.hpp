#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/rng.hpp"

namespace mdiqds {

// Packed bit vector, LSB-first within each 64-bit word. Bit i lives in
// word i/64 at position i%64; byte serialization is little-endian words
// truncated to ceil(n/8) bytes.
class Bitstring {
  public:
    Bitstring() = default;
    explicit Bitstring(std::size_t n) : n_(n), w_((n + 63) / 64, 0) {}

    static Bitstring random(std::size_t n, SplitRng& rng) {
        Bitstring b(n);
        for (auto& w : b.w_) w = rng.next_u64();
        b.trim();
        return b;
    }

    static Bitstring from_bytes(const std::uint8_t* data, std::size_t n_bits) {
        Bitstring b(n_bits);
        std::memcpy(b.w_.data(), data, (n_bits + 7) / 8);
        b.trim();
        return b;
    }

    std::size_t size() const { return n_; }
    bool empty() const { return n_ == 0; }

    bool get(std::size_t i) const {
        check(i);
        return (w_[i >> 6] >> (i & 63)) & 1;
    }

    void set(std::size_t i, bool v) {
        check(i);
        const std::uint64_t mask = 1ULL << (i & 63);
        if (v)
            w_[i >> 6] |= mask;
        else
            w_[i >> 6] &= ~mask;
    }

    void flip(std::size_t i) {
        check(i);
        w_[i >> 6] ^= 1ULL << (i & 63);
    }

    void xor_with(const Bitstring& other) {
        if (other.n_ != n_) throw std::invalid_argument("Bitstring::xor_with: length mismatch");
        for (std::size_t i = 0; i < w_.size(); ++i) w_[i] ^= other.w_[i];
    }

    std::uint64_t popcount() const {
        std::uint64_t c = 0;
        for (auto w : w_) c += static_cast<std::uint64_t>(__builtin_popcountll(w));
        return c;
    }

    std::uint64_t mismatches(const Bitstring& other) const {
        if (other.n_ != n_) throw std::invalid_argument("Bitstring::mismatches: length mismatch");
        std::uint64_t c = 0;
        for (std::size_t i = 0; i < w_.size(); ++i)
            c += static_cast<std::uint64_t>(__builtin_popcountll(w_[i] ^ other.w_[i]));
        return c;
    }

    bool parity_range(std::size_t off, std::size_t len) const {
        if (off + len > n_) throw std::out_of_range("Bitstring::parity_range");
        std::uint64_t acc = 0;
        std::size_t i = off;
        while (len > 0 && (i & 63) != 0) {
            acc ^= (w_[i >> 6] >> (i & 63)) & 1;
            ++i;
            --len;
        }
        while (len >= 64) {
            acc ^= static_cast<std::uint64_t>(__builtin_parityll(w_[i >> 6]));
            i += 64;
            len -= 64;
        }
        while (len > 0) {
            acc ^= (w_[i >> 6] >> (i & 63)) & 1;
            ++i;
            --len;
        }
        return acc & 1;
    }

    // Contiguous window [off, off+len) as a new Bitstring; word-shift based.
    Bitstring window(std::size_t off, std::size_t len) const {
        if (off + len > n_) throw std::out_of_range("Bitstring::window");
        Bitstring out(len);
        const std::size_t shift = off & 63;
        const std::size_t base = off >> 6;
        for (std::size_t i = 0; i < out.w_.size(); ++i) {
            std::uint64_t lo = w_[base + i] >> shift;
            std::uint64_t hi = 0;
            if (shift != 0 && base + i + 1 < w_.size()) hi = w_[base + i + 1] << (64 - shift);
            out.w_[i] = lo | hi;
        }
        out.trim();
        return out;
    }

    // XOR a window of `src` starting at src_off into this string at offset 0.
    // Used by the Toeplitz multiply hot loop.
    void xor_window(const Bitstring& src, std::size_t src_off) {
        const std::size_t len = n_;
        if (src_off + len > src.n_) throw std::out_of_range("Bitstring::xor_window");
        const std::size_t shift = src_off & 63;
        const std::size_t base = src_off >> 6;
        for (std::size_t i = 0; i < w_.size(); ++i) {
            std::uint64_t lo = src.w_[base + i] >> shift;
            std::uint64_t hi = 0;
            if (shift != 0 && base + i + 1 < src.w_.size()) hi = src.w_[base + i + 1] << (64 - shift);
            w_[i] ^= lo | hi;
        }
        trim();
    }

    void append(const Bitstring& other) {
        for (std::size_t i = 0; i < other.n_; ++i) push_back(other.get(i));
    }

    void push_back(bool v) {
        if ((n_ & 63) == 0) w_.push_back(0);
        if (v) w_[n_ >> 6] |= 1ULL << (n_ & 63);
        ++n_;
    }

    Bitstring select(const std::vector<std::uint32_t>& idx) const {
        Bitstring out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out.set(i, get(idx[i]));
        return out;
    }

    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out((n_ + 7) / 8);
        if (!out.empty()) std::memcpy(out.data(), w_.data(), out.size());
        return out;
    }

    const std::vector<std::uint64_t>& words() const { return w_; }

    bool operator==(const Bitstring& o) const { return n_ == o.n_ && w_ == o.w_; }
    bool operator!=(const Bitstring& o) const { return !(*this == o); }

  private:
    void check(std::size_t i) const {
        if (i >= n_) throw std::out_of_range("Bitstring index " + std::to_string(i) + " of " + std::to_string(n_));
    }
    void trim() {
        if ((n_ & 63) != 0 && !w_.empty()) w_.back() &= (~0ULL) >> (64 - (n_ & 63));
    }

    std::size_t n_ = 0;
    std::vector<std::uint64_t> w_;
};

// Flip each bit of `b` independently with probability `rate` (test noise injection).
inline std::uint64_t inject_flip_noise(Bitstring& b, double rate, SplitRng& rng) {
    std::uint64_t flips = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (rng.bernoulli(rate)) {
            b.flip(i);
            ++flips;
        }
    }
    return flips;
}

}  // namespace mdiqds
