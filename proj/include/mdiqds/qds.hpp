#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/bitstring.hpp"
#include "mdiqds/entropy.hpp"
#include "mdiqds/keyfile.hpp"
#include "mdiqds/rng.hpp"

namespace mdiqds::qds {

struct QdsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Largest even L with 6L <= ell. L/2 must be integral because half of each
// string is forwarded during symmetrization.
inline std::size_t select_L(std::uint64_t ell) {
    if (ell < 12) throw QdsError("select_L: key too short for any signature");
    return std::size_t(2 * (ell / 12));
}

// Mismatch-rate thresholds with their integer budgets. The chain
// E_bar < s_a < s_v < p_E is what separates the three security failure modes,
// so it is validated on construction.
struct Thresholds {
    double e_bar = 0.0;
    double s_a = 0.0, s_v = 0.0;
    double p_e = 0.0;
    std::uint64_t count_a = 0, count_v = 0;
    std::size_t L = 0;

    void validate() const {
        if (L == 0 || L % 2 != 0) throw QdsError("Thresholds: L must be positive and even");
        if (!(e_bar < s_a && s_a < s_v && s_v < p_e))
            throw QdsError("Thresholds: need E_bar < s_a < s_v < p_E");
        if (!(0 < s_a && s_v < 0.5)) throw QdsError("Thresholds: need 0 < s_a < s_v < 1/2");
        if (!(count_a < count_v && count_v < L / 2))
            throw QdsError("Thresholds: need count_a < count_v < L/2");
    }

    // Budgets given directly as integers; rates derived.
    static Thresholds from_counts(std::uint64_t count_a, std::uint64_t count_v, std::size_t L,
                                  double e_bar, double p_e) {
        Thresholds t;
        t.L = L;
        t.count_a = count_a;
        t.count_v = count_v;
        t.e_bar = e_bar;
        t.p_e = p_e;
        t.s_a = 2.0 * double(count_a) / double(L);
        t.s_v = 2.0 * double(count_v) / double(L);
        t.validate();
        return t;
    }
};

// Default policy: pad the test-error bound by delta and back off the guessing
// rate by the same margin. The integer budgets are authoritative; the rates
// are re-derived from them so that every party reconstructs the exact same
// thresholds from (count_a, count_v). Rounding must not cross the strict
// ordering, so the counts are clamped to the first integer past each bound
// when L is small enough for half a count to matter.
inline Thresholds choose_thresholds(double e_bar, double p_e, std::size_t L,
                                    double delta = 0.0002) {
    if (!(e_bar < p_e)) throw QdsError("choose_thresholds: need E_bar < p_E");
    const double half = double(L) / 2.0;
    std::int64_t ca = std::llround((e_bar + delta) * half);
    std::int64_t cv = std::llround((p_e - delta) * half);
    const std::int64_t ca_min = std::int64_t(std::floor(e_bar * half)) + 1;
    const std::int64_t cv_max = std::int64_t(std::ceil(p_e * half)) - 1;
    ca = std::max(ca, ca_min);
    cv = std::min(cv, cv_max);
    if (ca < 0 || cv < 0) throw QdsError("choose_thresholds: no integer budget fits");
    return Thresholds::from_counts(std::uint64_t(ca), std::uint64_t(cv), L, e_bar, p_e);
}

// ---------------------------------------------------------------------------
// Symmetrization

enum class Recipient : int { bob = 0, charlie = 1 };

inline const char* recipient_name(Recipient r) { return r == Recipient::bob ? "bob" : "charlie"; }

// Which positions of a string a recipient forwards to its peer. The indicator
// has bit i set iff position i is sent; its weight is exactly L/2.
struct HalfSelection {
    Bitstring indicator;
    std::vector<std::uint32_t> sent_idx;
    std::vector<std::uint32_t> kept_idx;
};

inline HalfSelection select_half(std::size_t L, SplitRng& rng) {
    if (L == 0 || L % 2 != 0) throw QdsError("select_half: L must be positive and even");
    std::vector<std::uint32_t> idx(L);
    for (std::size_t i = 0; i < L; ++i) idx[i] = std::uint32_t(i);
    rng.shuffle(idx);
    HalfSelection sel;
    sel.indicator = Bitstring(L);
    sel.sent_idx.assign(idx.begin(), idx.begin() + std::ptrdiff_t(L / 2));
    std::sort(sel.sent_idx.begin(), sel.sent_idx.end());
    for (auto i : sel.sent_idx) sel.indicator.set(i, true);
    sel.kept_idx.reserve(L / 2);
    for (std::size_t i = 0; i < L; ++i)
        if (!sel.indicator.get(i)) sel.kept_idx.push_back(std::uint32_t(i));
    return sel;
}

// Plaintext layout of one symmetrization message: the L/2 forwarded content
// bits in increasing position order, then the L-bit position indicator.
inline Bitstring encode_half_message(const Bitstring& K_m, const HalfSelection& sel) {
    const std::size_t L = K_m.size();
    if (sel.indicator.size() != L) throw QdsError("encode_half_message: selection/string mismatch");
    Bitstring msg = K_m.select(sel.sent_idx);
    msg.append(sel.indicator);
    return msg;
}

struct HalfData {
    Bitstring bits;
    std::vector<std::uint32_t> indices;
};

inline HalfData decode_half_message(const Bitstring& plain, std::size_t L) {
    if (L == 0 || L % 2 != 0) throw QdsError("decode_half_message: L must be positive and even");
    if (plain.size() != 3 * L / 2) throw QdsError("decode_half_message: length mismatch");
    HalfData out;
    out.bits = plain.window(0, L / 2);
    out.indices.reserve(L / 2);
    for (std::size_t i = 0; i < L; ++i)
        if (plain.get(L / 2 + i)) out.indices.push_back(std::uint32_t(i));
    if (out.indices.size() != L / 2)
        throw QdsError("decode_half_message: indicator weight is not L/2");
    return out;
}

inline Bitstring otp_crypt(const Bitstring& text, const Bitstring& pad) {
    if (text.size() != pad.size()) throw QdsError("otp_crypt: pad length mismatch");
    Bitstring out = text;
    out.xor_with(pad);
    return out;
}

// One recipient's post-exchange state for one message value m.
struct MessageState {
    HalfData kept;       // own string restricted to kept positions
    HalfData forwarded;  // peer's string restricted to the positions it sent
};

struct SymmetrizedState {
    Recipient who = Recipient::bob;
    std::size_t L = 0;
    MessageState msg[2];
    std::uint64_t otp_consumed = 0;
};

struct RecipientKeys {
    Bitstring K_0, K_1;
};

// Full two-recipient exchange over one shared pad. Each side encrypts
// 2 x (L/2 content + L indicator) bits, so the vault advances by exactly 6L.
inline std::pair<SymmetrizedState, SymmetrizedState> symmetrize(const RecipientKeys& bob,
                                                                const RecipientKeys& charlie,
                                                                OtpVault& otp, std::uint64_t seed) {
    const std::size_t L = bob.K_0.size();
    if (bob.K_1.size() != L || charlie.K_0.size() != L || charlie.K_1.size() != L)
        throw QdsError("symmetrize: string lengths differ");
    if (L == 0 || L % 2 != 0) throw QdsError("symmetrize: L must be positive and even");

    SplitRng root(seed);
    SymmetrizedState state_b, state_c;
    state_b.who = Recipient::bob;
    state_c.who = Recipient::charlie;
    state_b.L = state_c.L = L;

    const std::uint64_t before = otp.consumed();
    for (int m = 0; m < 2; ++m) {
        const Bitstring& kb = m == 0 ? bob.K_0 : bob.K_1;
        const Bitstring& kc = m == 0 ? charlie.K_0 : charlie.K_1;

        SplitRng rng_b = root.split(0x42 * 2 + std::uint64_t(m));
        SplitRng rng_c = root.split(0x43 * 2 + std::uint64_t(m));
        HalfSelection sel_b = select_half(L, rng_b);
        HalfSelection sel_c = select_half(L, rng_c);

        Bitstring pad_b = otp.take(3 * L / 2);
        Bitstring cipher_b = otp_crypt(encode_half_message(kb, sel_b), pad_b);
        Bitstring pad_c = otp.take(3 * L / 2);
        Bitstring cipher_c = otp_crypt(encode_half_message(kc, sel_c), pad_c);

        state_b.msg[m].kept.bits = kb.select(sel_b.kept_idx);
        state_b.msg[m].kept.indices = sel_b.kept_idx;
        state_b.msg[m].forwarded = decode_half_message(otp_crypt(cipher_c, pad_c), L);

        state_c.msg[m].kept.bits = kc.select(sel_c.kept_idx);
        state_c.msg[m].kept.indices = sel_c.kept_idx;
        state_c.msg[m].forwarded = decode_half_message(otp_crypt(cipher_b, pad_b), L);
    }
    state_b.otp_consumed = state_c.otp_consumed = otp.consumed() - before;
    return {state_b, state_c};
}

// ---------------------------------------------------------------------------
// Sign / verify

struct Signature {
    int m = 0;
    Bitstring sig_b;  // string shared with Bob
    Bitstring sig_c;  // string shared with Charlie
};

inline Signature sign(int m, const Bitstring& A_m_b, const Bitstring& A_m_c) {
    if (m != 0 && m != 1) throw QdsError("sign: message must be 0 or 1");
    if (A_m_b.size() != A_m_c.size()) throw QdsError("sign: string lengths differ");
    return Signature{m, A_m_b, A_m_c};
}

struct VerifyResult {
    bool accept = false;
    std::uint64_t mismatch_direct = 0;
    std::uint64_t mismatch_forwarded = 0;
};

namespace detail {

inline std::uint64_t count_mismatches(const Bitstring& sig, const HalfData& half, std::size_t L) {
    if (half.bits.size() != half.indices.size() || half.bits.size() != L / 2)
        throw QdsError("verify: half is not L/2 bits");
    if (sig.size() != L) throw QdsError("verify: signature string length mismatch");
    std::uint64_t mismatches = 0;
    for (std::size_t i = 0; i < half.indices.size(); ++i) {
        const std::uint32_t pos = half.indices[i];
        if (pos >= L) throw QdsError("verify: index out of range");
        if (sig.get(pos) != half.bits.get(i)) ++mismatches;
    }
    return mismatches;
}

}  // namespace detail

// Strict-less acceptance on both parts. The direct part checks the verifier's
// own kept half; the forwarded part checks what the peer sent over.
inline VerifyResult verify(const Signature& sig, const SymmetrizedState& state,
                           std::uint64_t budget) {
    const Bitstring& direct = state.who == Recipient::bob ? sig.sig_b : sig.sig_c;
    const Bitstring& crossed = state.who == Recipient::bob ? sig.sig_c : sig.sig_b;
    const MessageState& ms = state.msg[sig.m & 1];
    VerifyResult r;
    r.mismatch_direct = detail::count_mismatches(direct, ms.kept, state.L);
    r.mismatch_forwarded = detail::count_mismatches(crossed, ms.forwarded, state.L);
    r.accept = r.mismatch_direct < budget && r.mismatch_forwarded < budget;
    return r;
}

// ---------------------------------------------------------------------------
// Security bounds

struct BoundResult {
    double value = 1.0;
    bool vacuous = false;
};

inline BoundResult repudiation_bound(double s_a, double s_v, std::size_t L, double eps_qkd) {
    const double gap = s_v - s_a;
    BoundResult r;
    r.value = 2.0 * std::exp(-gap * gap * double(L) / 4.0) + eps_qkd;
    r.vacuous = gap <= 0.0 || r.value >= 1.0;
    return r;
}

inline BoundResult forging_bound(double p_e, double s_v, std::size_t L, double f, double eps,
                                 double eps_pe, double eps_est) {
    if (!(f > 0.0)) throw QdsError("forging_bound: f must be positive");
    const double h_pe = binary_entropy(p_e);
    const double h_sv = binary_entropy(s_v);
    if (h_pe <= h_sv) throw QdsError("forging_bound: entropy gap is not positive");
    const double exponent = -(double(L) / 2.0) * (h_pe - h_sv);
    BoundResult r;
    r.value = (std::exp2(exponent) + eps) / f + f + eps_pe + eps_est;
    r.vacuous = f >= 1.0 || r.value >= 1.0;
    return r;
}

// Honest-abort probability. Chernoff form of the tail at gap (s_a - E_bar):
// each recipient's kept half of L/2 bits must stay under the budget, and the
// relative entropy between the budget rate and the honest rate drives the
// exponent. Factor 2 covers either recipient aborting.
inline BoundResult robustness_bound(double e_bar, double s_a, std::size_t L, double eps_pe) {
    BoundResult r;
    if (!(e_bar < s_a) || e_bar < 0.0) {
        r.value = 1.0;
        r.vacuous = true;
        return r;
    }
    const double tail =
        e_bar == 0.0 ? 0.0 : std::exp(-(double(L) / 2.0) * kl_bernoulli(s_a, e_bar));
    r.value = 2.0 * (tail + eps_pe);
    r.vacuous = r.value >= 1.0;
    return r;
}

// Solves h(p_E) = H_min / (L/2) on [0, 1/2]. H_min at or above L/2 means the
// adversary can do no better than guessing.
inline double estimate_p_e(double h_min, std::size_t L) {
    if (L == 0 || L % 2 != 0) throw QdsError("estimate_p_e: L must be positive and even");
    if (!(h_min > 0.0)) throw QdsError("estimate_p_e: min-entropy bound is not positive");
    const double target = h_min / (double(L) / 2.0);
    if (target >= 1.0) return 0.5;
    return binary_entropy_inverse(target);
}

inline double estimate_p_e(double n1_kept, double e1, std::size_t L) {
    return estimate_p_e(n1_kept * (1.0 - binary_entropy(e1)), L);
}

// ---------------------------------------------------------------------------
// Report

struct SecurityReport {
    Thresholds thresholds;
    BoundResult eps_rob, eps_rep, eps_for;
    std::vector<std::string> notes;
};

inline std::string write_security_report(const SecurityReport& rep) {
    const Thresholds& t = rep.thresholds;
    std::ostringstream os;
    os.precision(12);
    os << "mdiqds-table2 v1\n";
    os << "L " << t.L << "\n";
    os << "E_bar " << t.e_bar << "\n";
    os << "s_a " << t.s_a << "\n";
    os << "s_a_L_half " << t.count_a << "\n";
    os << "s_v " << t.s_v << "\n";
    os << "s_v_L_half " << t.count_v << "\n";
    os << "p_E " << t.p_e << "\n";
    os << "eps_rob " << rep.eps_rob.value << (rep.eps_rob.vacuous ? " vacuous" : "") << "\n";
    os << "eps_rep " << rep.eps_rep.value << (rep.eps_rep.vacuous ? " vacuous" : "") << "\n";
    os << "eps_for " << rep.eps_for.value << (rep.eps_for.vacuous ? " vacuous" : "") << "\n";
    for (const auto& n : rep.notes) os << "note " << n << "\n";
    os << "end\n";
    return os.str();
}

}  // namespace mdiqds::qds
