#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mdiqds/bitstring.hpp"
#include "mdiqds/quantum_sim.hpp"
#include "mdiqds/rng.hpp"
#include "mdiqds/stats.hpp"

namespace mdiqds::kgp {

using mdiqds::serfling_bound;

struct KgpError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One KGP link's correlated raw data: the signer's bits and the recipient's
// flipped bits, aligned by success index.
struct CorrelatedPair {
    Bitstring alice;
    Bitstring recipient;

    void validate() const {
        if (alice.size() != recipient.size()) throw KgpError("CorrelatedPair: length mismatch");
    }
};

// Signature raw material is the Z-basis, signal-signal subsequence only.
inline CorrelatedPair select_signature_data(const sim::SiftedData& sifted) {
    CorrelatedPair out;
    out.alice = sifted.side_a(sim::Intensity::sig, sim::Intensity::sig, sim::Basis::Z);
    out.recipient = sifted.side_b(sim::Intensity::sig, sim::Intensity::sig, sim::Basis::Z);
    return out;
}

// Index split both parties derive from the shared seed: the run is halved
// (one half per future message), a seeded shuffle of each half keeps L
// positions for the signature and announces the rest as test bits.
struct KgpSelection {
    std::vector<std::uint32_t> keep[2];
    std::vector<std::uint32_t> test[2];
};

inline KgpSelection kgp_select(std::size_t run_length, std::size_t L, std::uint64_t seed) {
    if (L == 0) throw KgpError("kgp_select: L must be positive");
    const std::size_t half = run_length / 2;
    if (half < L + 1)
        throw KgpError("kgp_select: run too short, each half needs L signature bits plus test bits");
    SplitRng root(seed);
    KgpSelection sel;
    for (int m = 0; m < 2; ++m) {
        std::vector<std::uint32_t> idx(half);
        const std::uint32_t base = m == 0 ? 0 : std::uint32_t(half);
        for (std::size_t i = 0; i < half; ++i) idx[i] = base + std::uint32_t(i);
        SplitRng rng = root.split(0x6b67 + std::uint64_t(m));
        rng.shuffle(idx);
        sel.keep[m].assign(idx.begin(), idx.begin() + std::ptrdiff_t(L));
        sel.test[m].assign(idx.begin() + std::ptrdiff_t(L), idx.end());
    }
    return sel;
}

struct KgpOutput {
    Bitstring A_0, A_1;  // signer's signature strings
    Bitstring K_0, K_1;  // recipient's matching strings
    double E_bound_0 = 1.0, E_bound_1 = 1.0;
    double test_error_rate = 0.0;
    std::uint64_t test_errors[2] = {0, 0};
    std::uint64_t test_size[2] = {0, 0};
    KgpSelection selection;
};

inline KgpOutput form_strings(const CorrelatedPair& pair, std::size_t L, std::uint64_t seed,
                              double eps_pe) {
    pair.validate();
    KgpOutput out;
    out.selection = kgp_select(pair.alice.size(), L, seed);
    out.A_0 = pair.alice.select(out.selection.keep[0]);
    out.A_1 = pair.alice.select(out.selection.keep[1]);
    out.K_0 = pair.recipient.select(out.selection.keep[0]);
    out.K_1 = pair.recipient.select(out.selection.keep[1]);
    std::uint64_t errors_total = 0, size_total = 0;
    for (int m = 0; m < 2; ++m) {
        const auto& test = out.selection.test[m];
        std::uint64_t errs = 0;
        for (auto i : test) errs += pair.alice.get(i) != pair.recipient.get(i) ? 1 : 0;
        out.test_errors[m] = errs;
        out.test_size[m] = test.size();
        errors_total += errs;
        size_total += test.size();
        const double bound = serfling_bound(errs, test.size(), L, eps_pe);
        if (m == 0)
            out.E_bound_0 = bound;
        else
            out.E_bound_1 = bound;
    }
    out.test_error_rate = size_total ? double(errors_total) / double(size_total) : 0.0;
    return out;
}

}  // namespace mdiqds::kgp
