#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "mdiqds/bitstring.hpp"
#include "mdiqds/rng.hpp"

namespace mdiqds::rec {

struct ReconcileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawKeyPair {
    Bitstring key_a;  // reference side, never modified
    Bitstring key_b;
    double qber_estimate = 0.0;

    void validate() const {
        if (key_a.size() != key_b.size()) throw ReconcileError("RawKeyPair: length mismatch");
        if (key_a.empty()) throw ReconcileError("RawKeyPair: empty keys");
        if (qber_estimate < 0.0 || qber_estimate >= 0.5)
            throw ReconcileError("RawKeyPair: qber estimate outside [0, 1/2)");
    }
};

struct ReconciliationResult {
    Bitstring corrected_key;
    std::uint64_t leak_bits = 0;
    bool verified = false;
    std::uint32_t rounds = 0;
    std::uint64_t corrections = 0;
};

// One batched parity exchange: spans refer to positions of the pass's shared
// permutation, so both sides resolve them without shipping index lists.
struct ParityQuery {
    std::uint8_t pass;
    std::uint32_t lo, hi;  // half-open span in permuted order
};

class ParitySource {
  public:
    virtual ~ParitySource() = default;
    virtual std::vector<std::uint8_t> answer(const std::vector<ParityQuery>& queries) = 0;
};

namespace detail {

inline std::vector<std::vector<std::uint32_t>> cascade_permutations(std::size_t n, int passes,
                                                                    std::uint64_t seed) {
    std::vector<std::vector<std::uint32_t>> perms;
    perms.resize(std::size_t(passes));
    for (int p = 0; p < passes; ++p) {
        auto& perm = perms[std::size_t(p)];
        perm.resize(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = std::uint32_t(i);
        if (p > 0) {
            SplitRng rng = SplitRng(seed).split(0x5ca5cade + std::uint64_t(p));
            rng.shuffle(perm);
        }
    }
    return perms;
}

inline std::uint64_t first_block_size(double qber, std::size_t n) {
    if (qber <= 0.0) return n;
    const double k = std::ceil(0.73 / qber);
    return std::uint64_t(std::clamp(k, 1.0, double(n)));
}

}  // namespace detail

// Reference-side responder; also usable as the local half of the pure cascade.
class LocalParitySource : public ParitySource {
  public:
    LocalParitySource(const Bitstring& key, int passes, std::uint64_t seed)
        : key_(key), perms_(detail::cascade_permutations(key.size(), passes, seed)) {}

    std::vector<std::uint8_t> answer(const std::vector<ParityQuery>& queries) override {
        std::vector<std::uint8_t> out(queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto& q = queries[i];
            if (q.pass >= perms_.size() || q.lo > q.hi || q.hi > key_.size())
                throw ReconcileError("parity query out of range");
            const auto& perm = perms_[q.pass];
            bool acc = false;
            for (std::uint32_t j = q.lo; j < q.hi; ++j) acc ^= key_.get(perm[j]);
            out[i] = acc ? 1 : 0;
        }
        return out;
    }

  private:
    const Bitstring& key_;
    std::vector<std::vector<std::uint32_t>> perms_;
};

// Cascade, run from the corrected side against a parity source. Original
// schedule: first block about 0.73/QBER, doubling per pass, at least four
// passes, seeded block shuffles from pass two, binary search on odd blocks,
// backtracking through earlier passes after every repaired bit. Queries are
// batched per round; leak counts every answered parity bit.
class CascadeDriver {
  public:
    CascadeDriver(Bitstring& key_b, double qber_estimate, int passes, std::uint64_t seed,
                  ParitySource& source)
        : key_(key_b), passes_(std::max(passes, 4)), seed_(seed), source_(source) {
        n_ = key_.size();
        if (n_ == 0) throw ReconcileError("cascade: empty key");
        perms_ = detail::cascade_permutations(n_, passes_, seed_);
        std::uint64_t k = detail::first_block_size(qber_estimate, n_);
        block_size_.resize(std::size_t(passes_));
        for (int p = 0; p < passes_; ++p) {
            block_size_[std::size_t(p)] = k;
            k = std::min<std::uint64_t>(n_, k * 2);
        }
        pos_of_.assign(std::size_t(passes_), std::vector<std::uint32_t>(n_));
        for (int p = 0; p < passes_; ++p)
            for (std::uint32_t j = 0; j < n_; ++j) pos_of_[std::size_t(p)][perms_[std::size_t(p)][j]] = j;
    }

    ReconciliationResult run() {
        ReconciliationResult res;
        for (int p = 0; p < passes_; ++p) {
            scan_pass(p);
            drain();
            if (p == 0 && corrections_ == 0) break;  // clean first pass, nothing to chase
        }
        res.corrected_key = key_;
        res.leak_bits = leak_;
        res.rounds = rounds_;
        res.corrections = corrections_;
        return res;
    }

  private:
    struct Span {
        std::uint8_t pass;
        std::uint32_t lo, hi;
    };

    std::uint64_t block_of(int pass, std::uint32_t permuted) const {
        return permuted / block_size_[std::size_t(pass)];
    }

    bool local_parity(const Span& s) const {
        const auto& perm = perms_[s.pass];
        bool acc = false;
        for (std::uint32_t j = s.lo; j < s.hi; ++j) acc ^= key_.get(perm[j]);
        return acc;
    }

    bool ref_parity(const Span& s) {
        const auto key = std::tuple<int, std::uint32_t, std::uint32_t>(s.pass, s.lo, s.hi);
        auto it = ref_cache_.find(key);
        if (it != ref_cache_.end()) return it->second;
        pending_.push_back({s.pass, s.lo, s.hi});
        flush();
        return ref_cache_.at(key);
    }

    void flush() {
        if (pending_.empty()) return;
        auto answers = source_.answer(pending_);
        if (answers.size() != pending_.size()) throw ReconcileError("cascade: bad answer batch");
        for (std::size_t i = 0; i < pending_.size(); ++i) {
            ref_cache_[{pending_[i].pass, pending_[i].lo, pending_[i].hi}] = answers[i] != 0;
            ++leak_;
        }
        pending_.clear();
        ++rounds_;
    }

    // Query every block parity of a pass in one round, then queue the odd ones.
    void scan_pass(int p) {
        const std::uint64_t k = block_size_[std::size_t(p)];
        std::vector<Span> blocks;
        for (std::uint64_t lo = 0; lo < n_; lo += k)
            blocks.push_back({std::uint8_t(p), std::uint32_t(lo), std::uint32_t(std::min<std::uint64_t>(lo + k, n_))});
        for (const auto& b : blocks)
            pending_.push_back({b.pass, b.lo, b.hi});
        flush();
        for (const auto& b : blocks)
            if (local_parity(b) != ref_cache_.at({b.pass, b.lo, b.hi})) odd_.push_back(b);
    }

    // Binary-search every queued odd block; each repair re-checks the bit's
    // blocks in all other passes already scanned and queues newly odd ones.
    void drain() {
        while (!odd_.empty()) {
            Span s = odd_.back();
            odd_.pop_back();
            if (local_parity(s) == ref_parity(s)) continue;  // repaired meanwhile
            while (s.hi - s.lo > 1) {
                const std::uint32_t mid = s.lo + (s.hi - s.lo) / 2;
                const Span left{s.pass, s.lo, mid};
                // Right-half reference parity follows from the block's, so
                // only the left half costs a disclosed bit.
                if (local_parity(left) != ref_parity(left))
                    s = left;
                else
                    s = Span{s.pass, mid, s.hi};
            }
            const std::uint32_t bit = perms_[s.pass][s.lo];
            key_.flip(bit);
            ++corrections_;
            for (int p = 0; p <= scanned_; ++p) {
                if (p == s.pass) continue;
                const std::uint32_t pos = pos_of_[std::size_t(p)][bit];
                const std::uint64_t k = block_size_[std::size_t(p)];
                const Span blk{std::uint8_t(p), std::uint32_t(pos / k * k),
                               std::uint32_t(std::min<std::uint64_t>(pos / k * k + k, n_))};
                const auto it = ref_cache_.find({blk.pass, blk.lo, blk.hi});
                if (it != ref_cache_.end() && local_parity(blk) != it->second) odd_.push_back(blk);
            }
        }
        ++scanned_;
    }

    Bitstring& key_;
    int passes_;
    std::uint64_t seed_;
    ParitySource& source_;
    std::size_t n_ = 0;
    std::vector<std::vector<std::uint32_t>> perms_, pos_of_;
    std::vector<std::uint64_t> block_size_;
    std::map<std::tuple<int, std::uint32_t, std::uint32_t>, bool> ref_cache_;
    std::vector<ParityQuery> pending_;
    std::vector<Span> odd_;
    std::uint64_t leak_ = 0, corrections_ = 0;
    std::uint32_t rounds_ = 0;
    int scanned_ = 0;
};

inline ReconciliationResult cascade(const RawKeyPair& pair, std::uint64_t seed, int passes = 4) {
    pair.validate();
    LocalParitySource source(pair.key_a, std::max(passes, 4), seed);
    Bitstring work = pair.key_b;
    CascadeDriver driver(work, pair.qber_estimate, passes, seed, source);
    return driver.run();
}

// Tag length that caps the two-universal collision probability at eps_cor.
inline std::uint32_t verification_tag_bits(double eps_cor) {
    if (eps_cor <= 0.0 || eps_cor >= 1.0)
        throw ReconcileError("verification_tag_bits: eps_cor outside (0,1)");
    return std::uint32_t(std::ceil(std::log2(1.0 / eps_cor)));
}

namespace detail {

// out_j = parity of the key masked by matrix row R[j,i] = seed[j - i + n - 1];
// column-wise accumulation, one window XOR per set key bit.
inline Bitstring toeplitz_multiply(const Bitstring& key, std::size_t out_len,
                                   const Bitstring& matrix_seed) {
    if (out_len == 0) return Bitstring();
    const std::size_t n = key.size();
    if (matrix_seed.size() < n + out_len - 1)
        throw ReconcileError("toeplitz_extract: seed too short");
    Bitstring out(out_len);
    for (std::size_t i = 0; i < n; ++i)
        if (key.get(i)) out.xor_window(matrix_seed, n - 1 - i);
    return out;
}

}  // namespace detail

// Toeplitz-matrix privacy amplification over GF(2).
inline Bitstring toeplitz_extract(const Bitstring& key, std::size_t out_len,
                                  const Bitstring& matrix_seed) {
    if (out_len > key.size()) throw ReconcileError("toeplitz_extract: output longer than input");
    return detail::toeplitz_multiply(key, out_len, matrix_seed);
}

struct VerifyOutcome {
    bool verified = false;
    std::uint32_t tag_bits = 0;
    Bitstring tag_a, tag_b;
};

// Error verification by comparing Toeplitz tags under a shared seed; a false
// accept needs a hash collision, probability 2^-tag_bits <= eps_cor.
inline VerifyOutcome verify_correctness(const Bitstring& key_a, const Bitstring& key_b,
                                        double eps_cor, std::uint64_t seed) {
    if (key_a.size() != key_b.size()) throw ReconcileError("verify_correctness: length mismatch");
    VerifyOutcome out;
    out.tag_bits = verification_tag_bits(eps_cor);
    if (key_a.empty()) {
        out.verified = true;
        return out;
    }
    SplitRng rng(seed);
    const Bitstring hash_seed = Bitstring::random(key_a.size() + out.tag_bits - 1, rng);
    out.tag_a = detail::toeplitz_multiply(key_a, out.tag_bits, hash_seed);
    out.tag_b = detail::toeplitz_multiply(key_b, out.tag_bits, hash_seed);
    out.verified = out.tag_a == out.tag_b;
    return out;
}

}  // namespace mdiqds::rec
