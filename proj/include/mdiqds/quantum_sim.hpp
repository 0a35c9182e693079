#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdiqds/bitstring.hpp"
#include "mdiqds/rng.hpp"

namespace mdiqds::sim {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Intensity : std::uint8_t { vac = 0, dec = 1, sig = 2 };
enum class Basis : std::uint8_t { Z = 0, X = 1 };

inline const char* intensity_name(Intensity v) {
    switch (v) {
        case Intensity::vac: return "w";
        case Intensity::dec: return "nu";
        default: return "mu";
    }
}
inline const char* basis_name(Basis b) { return b == Basis::Z ? "Z" : "X"; }

// Pulsed decoy source. Signal pulses encode in Z only; decoy pulses choose a
// basis with probability p_z_decoy for Z. Vacuum pulses carry no photons, but
// draw the same basis label so every pulse pair lands in exactly one tally
// bucket (the label has no physical effect).
struct SourceConfig {
    double mu = 0.33;
    double nu = 0.1;
    double w = 0.0;
    double p_mu = 0.256;
    double p_nu = 0.584;
    double p_w = 0.16;
    double p_z_decoy = 0.369;
    double rep_rate_hz = 75e6;

    double intensity_value(Intensity v) const {
        switch (v) {
            case Intensity::vac: return w;
            case Intensity::dec: return nu;
            default: return mu;
        }
    }
    double prob(Intensity v) const {
        switch (v) {
            case Intensity::vac: return p_w;
            case Intensity::dec: return p_nu;
            default: return p_mu;
        }
    }
    double z_prob(Intensity v) const { return v == Intensity::sig ? 1.0 : p_z_decoy; }

    void validate() const {
        if (mu <= 0 || nu <= 0) throw SimError("source: mu and nu must be positive");
        if (w != 0.0) throw SimError("source: vacuum intensity must be exactly 0");
        if (nu >= mu) throw SimError("source: decoy intensity must be below signal");
        if (p_mu < 0 || p_nu < 0 || p_w < 0 || std::abs(p_mu + p_nu + p_w - 1.0) > 1e-9)
            throw SimError("source: intensity probabilities must be nonnegative and sum to 1");
        if (p_z_decoy <= 0 || p_z_decoy >= 1) throw SimError("source: p_z_decoy outside (0,1)");
        if (rep_rate_hz <= 0) throw SimError("source: rep rate must be positive");
    }
};

// One relay-terminated link. Arm "a" is the reference sender (its vacuum and
// single-photon emissions define n_0 / n_1 ground truth); arm "b" is the
// sender whose sifted bits get flipped.
struct LinkConfig {
    double loss_a_db = 9.2;
    double loss_b_db = 5.1;
    double insertion_db = 6.2;
    double det_eff_0 = 0.66;
    double det_eff_1 = 0.64;
    double window_eff = 0.90;
    double dark_rate_hz = 30.0;   // per detector, spurious counts included
    double visibility = 0.98;     // two-photon interference quality

    void validate() const {
        if (loss_a_db < 0 || loss_b_db < 0 || insertion_db < 0)
            throw SimError("link: losses must be nonnegative");
        for (double e : {det_eff_0, det_eff_1, window_eff})
            if (e < 0 || e > 1) throw SimError("link: efficiencies must be in [0,1]");
        if (dark_rate_hz < 0) throw SimError("link: dark rate must be nonnegative");
        if (visibility < 0 || visibility > 1) throw SimError("link: visibility must be in [0,1]");
    }
};

// Photon-number classes are truncated: emissions beyond the cap are folded
// into the cap class. The sampler, the analytic model and the oracle grids
// all share the truncation, so they stay exactly consistent.
inline constexpr int kPhotonCap = 12;
inline constexpr int kPhotonClasses = kPhotonCap + 1;

struct SettingTally {
    std::uint64_t sent = 0;
    std::uint64_t success = 0;
    std::uint64_t errors = 0;
};

class TallyMatrix {
  public:
    std::uint64_t n_pulses = 0;
    bool oracle = false;
    double intensity[2][3] = {{0.0, 0.1, 0.33}, {0.0, 0.1, 0.33}};  // [side][Intensity]

    SettingTally& at(Intensity b, Intensity c, Basis beta) {
        return t_[idx3(b, c, beta)];
    }
    const SettingTally& at(Intensity b, Intensity c, Basis beta) const {
        return t_[idx3(b, c, beta)];
    }
    std::uint64_t& mismatch(Intensity b, Intensity c) { return mm_[int(b) * 3 + int(c)]; }
    std::uint64_t mismatch(Intensity b, Intensity c) const { return mm_[int(b) * 3 + int(c)]; }

    void enable_oracle() {
        oracle = true;
        ph_success_.assign(18 * kPhotonClasses * kPhotonClasses, 0);
        ph_errors_.assign(18 * kPhotonClasses * kPhotonClasses, 0);
    }
    std::uint64_t& ph_success(Intensity b, Intensity c, Basis beta, int na, int nb) {
        return ph_success_[phidx(b, c, beta, na, nb)];
    }
    std::uint64_t ph_success(Intensity b, Intensity c, Basis beta, int na, int nb) const {
        return oracle ? ph_success_[phidx(b, c, beta, na, nb)] : 0;
    }
    std::uint64_t& ph_errors(Intensity b, Intensity c, Basis beta, int na, int nb) {
        return ph_errors_[phidx(b, c, beta, na, nb)];
    }
    std::uint64_t ph_errors(Intensity b, Intensity c, Basis beta, int na, int nb) const {
        return oracle ? ph_errors_[phidx(b, c, beta, na, nb)] : 0;
    }

    // Ground truth (oracle mode): successes where the reference arm emitted
    // vacuum, and where both arms emitted exactly one photon.
    std::uint64_t true_n0(Intensity b, Intensity c, Basis beta) const {
        require_oracle();
        std::uint64_t s = 0;
        for (int nb = 0; nb < kPhotonClasses; ++nb) s += ph_success(b, c, beta, 0, nb);
        return s;
    }
    std::uint64_t true_n1(Intensity b, Intensity c, Basis beta) const {
        require_oracle();
        return ph_success(b, c, beta, 1, 1);
    }
    std::uint64_t true_n1_errors(Intensity b, Intensity c, Basis beta) const {
        require_oracle();
        return ph_errors(b, c, beta, 1, 1);
    }

    std::uint64_t total_sent() const {
        std::uint64_t s = 0;
        for (const auto& x : t_) s += x.sent;
        for (auto m : mm_) s += m;
        return s;
    }

    void merge(const TallyMatrix& o) {
        if (oracle != o.oracle) throw SimError("TallyMatrix::merge: oracle mode mismatch");
        for (int s = 0; s < 2; ++s)
            for (int i = 0; i < 3; ++i)
                if (intensity[s][i] != o.intensity[s][i])
                    throw SimError("TallyMatrix::merge: intensity mismatch");
        n_pulses += o.n_pulses;
        for (std::size_t i = 0; i < t_.size(); ++i) {
            t_[i].sent += o.t_[i].sent;
            t_[i].success += o.t_[i].success;
            t_[i].errors += o.t_[i].errors;
        }
        for (std::size_t i = 0; i < mm_.size(); ++i) mm_[i] += o.mm_[i];
        if (oracle)
            for (std::size_t i = 0; i < ph_success_.size(); ++i) {
                ph_success_[i] += o.ph_success_[i];
                ph_errors_[i] += o.ph_errors_[i];
            }
    }

    void serialize(std::ostream& out) const;
    static TallyMatrix parse(std::istream& in);

    bool operator==(const TallyMatrix& o) const {
        return n_pulses == o.n_pulses && oracle == o.oracle && eq_grid(o) &&
               ph_success_ == o.ph_success_ && ph_errors_ == o.ph_errors_;
    }

  private:
    bool eq_grid(const TallyMatrix& o) const {
        for (std::size_t i = 0; i < t_.size(); ++i)
            if (t_[i].sent != o.t_[i].sent || t_[i].success != o.t_[i].success ||
                t_[i].errors != o.t_[i].errors)
                return false;
        return mm_ == o.mm_;
    }
    void require_oracle() const {
        if (!oracle) throw SimError("tally has no oracle tags");
    }
    static std::size_t idx3(Intensity b, Intensity c, Basis beta) {
        return (std::size_t(b) * 3 + std::size_t(c)) * 2 + std::size_t(beta);
    }
    static std::size_t phidx(Intensity b, Intensity c, Basis beta, int na, int nb) {
        if (na < 0 || na >= kPhotonClasses || nb < 0 || nb >= kPhotonClasses)
            throw SimError("photon class index out of range");
        return (idx3(b, c, beta) * kPhotonClasses + std::size_t(na)) * kPhotonClasses + std::size_t(nb);
    }

    std::array<SettingTally, 18> t_{};
    std::array<std::uint64_t, 9> mm_{};
    std::vector<std::uint64_t> ph_success_, ph_errors_;
};

// A materialized relay success. Only matched-basis successes are stored;
// basis-mismatched pairs are counted in the tally and dropped (sifting would
// discard them before any post-processing).
struct Event {
    Intensity ia, ib;
    Basis basis;
    bool bit_a, bit_b_raw;

    std::uint8_t pack() const {
        return std::uint8_t(int(ia) | (int(ib) << 2) | (int(basis) << 4) | (int(bit_a) << 5) |
                            (int(bit_b_raw) << 6));
    }
    static Event unpack(std::uint8_t v) {
        Event e;
        e.ia = Intensity(v & 3);
        e.ib = Intensity((v >> 2) & 3);
        e.basis = Basis((v >> 4) & 1);
        e.bit_a = (v >> 5) & 1;
        e.bit_b_raw = (v >> 6) & 1;
        return e;
    }
};

using EventList = std::vector<std::uint8_t>;

namespace detail {

// Detection cells: cell = bin*2 + det with bin 0 = early, 1 = late.
// The singlet signature is a coincidence in opposite bins on opposite
// detectors: exactly {D0 early, D1 late} or {D1 early, D0 late}.
struct ArmMass {
    double cell[4];
    double lost;
};

inline ArmMass arm_mass(double sigma, double det0, double det1, double window, Basis basis,
                        int bit) {
    ArmMass m{};
    for (int bin = 0; bin < 2; ++bin) {
        double bin_prob = basis == Basis::Z ? (bin == bit ? 1.0 : 0.0) : 0.5;
        m.cell[bin * 2 + 0] = sigma * bin_prob * 0.5 * det0 * window;
        m.cell[bin * 2 + 1] = sigma * bin_prob * 0.5 * det1 * window;
    }
    m.lost = 1.0 - m.cell[0] - m.cell[1] - m.cell[2] - m.cell[3];
    return m;
}

struct ClassSplit {
    double total = 0;    // P(success pattern)
    double pure11 = 0;   // exactly one detected photon per arm, darks silent
    double multi = 0;    // >=1 detected per arm otherwise, darks silent
    double rest = 0;     // dark-assisted or one-sided
};

}  // namespace detail

// Shared analytic core: per-class success probabilities and the visibility
// error rule. The sampler draws from exactly these numbers.
class LinkModel {
  public:
    LinkModel(const SourceConfig& src_a, const SourceConfig& src_b, const LinkConfig& link)
        : src_a_(src_a), src_b_(src_b), link_(link) {
        src_a_.validate();
        src_b_.validate();
        link_.validate();
        sigma_a_ = std::pow(10.0, -(link.loss_a_db + link.insertion_db) / 10.0);
        sigma_b_ = std::pow(10.0, -(link.loss_b_db + link.insertion_db) / 10.0);
        dark_ = link.dark_rate_hz / src_a_.rep_rate_hz / 2.0;  // per detector per bin gate
        if (dark_ >= 1.0) throw SimError("link: dark probability per gate reaches 1");
    }

    const SourceConfig& source_a() const { return src_a_; }
    const SourceConfig& source_b() const { return src_b_; }
    const LinkConfig& link() const { return link_; }

    double truncated_pmf(int side, Intensity v, int n) const {
        double lambda = (side == 0 ? src_a_ : src_b_).intensity_value(v);
        if (n < kPhotonCap) return poisson_pmf(lambda, n);
        double head = 0;
        for (int k = 0; k < kPhotonCap; ++k) head += poisson_pmf(lambda, k);
        return std::max(0.0, 1.0 - head);
    }

    detail::ClassSplit class_split(Basis basis, int bit_a, int bit_b, int na, int nb) const {
        const auto ma = detail::arm_mass(sigma_a_, link_.det_eff_0, link_.det_eff_1,
                                         link_.window_eff, basis, bit_a);
        const auto mb = detail::arm_mass(sigma_b_, link_.det_eff_0, link_.det_eff_1,
                                         link_.window_eff, basis, bit_b);
        detail::ClassSplit out;
        const double no_dark4 = std::pow(1.0 - dark_, 4);
        const int patterns[2][2] = {{0, 3}, {1, 2}};
        for (const auto& pat : patterns) {
            const int c1 = pat[0], c2 = pat[1];
            // Inclusion-exclusion over which pattern cells may click.
            double total = 0, phi = 0, phi_a = 0, phi_b = 0;
            for (int u = 0; u < 4; ++u) {
                const bool has1 = u & 1, has2 = u & 2;
                const int usize = int(has1) + int(has2);
                const double sign = (usize == 1) ? -1.0 : 1.0;
                double mass_a = ma.lost + (has1 ? ma.cell[c1] : 0.0) + (has2 ? ma.cell[c2] : 0.0);
                double mass_b = mb.lost + (has1 ? mb.cell[c1] : 0.0) + (has2 ? mb.cell[c2] : 0.0);
                const double pa = ipow(mass_a, na), pb = ipow(mass_b, nb);
                total += sign * std::pow(1.0 - dark_, 4 - usize) * pa * pb;
                phi += sign * pa * pb;
                phi_a += sign * pa;
                phi_b += sign * pb;
            }
            phi_a *= ipow(mb.lost, nb);
            phi_b *= ipow(ma.lost, na);
            double pure = 0;
            if (na >= 1 && nb >= 1) {
                const double la = ipow(ma.lost, na - 1), lb = ipow(mb.lost, nb - 1);
                pure = double(na) * double(nb) * la * lb *
                       (ma.cell[c1] * mb.cell[c2] + ma.cell[c2] * mb.cell[c1]);
            }
            double both = std::max(0.0, phi - phi_a - phi_b) * no_dark4;
            pure *= no_dark4;
            pure = std::min(pure, both);
            out.total += std::max(0.0, total);
            out.pure11 += pure;
            out.multi += both - pure;
        }
        out.rest = std::max(0.0, out.total - out.pure11 - out.multi);
        return out;
    }

    double x_error_given(const detail::ClassSplit& s) const {
        if (s.total <= 0) return 0.0;
        const double v = link_.visibility;
        return (s.pure11 * (1.0 - v) / 2.0 + s.multi * (0.5 - v / 4.0) + s.rest * 0.5) / s.total;
    }

    // Yield of a photon-number class, bit averaged (Z) or bit free (X).
    double yield(Basis basis, int na, int nb) const {
        if (basis == Basis::X) return class_split(Basis::X, 0, 0, na, nb).total;
        double q = 0;
        for (int xa = 0; xa < 2; ++xa)
            for (int xb = 0; xb < 2; ++xb) q += 0.25 * class_split(Basis::Z, xa, xb, na, nb).total;
        return q;
    }

    // Per sent matched-basis pair: success probability and error fraction.
    void setting_rates(Intensity b, Intensity c, Basis basis, double& gain, double& error_rate) const {
        double q = 0, err = 0;
        for (int na = 0; na < kPhotonClasses; ++na) {
            const double pa = truncated_pmf(0, b, na);
            if (pa == 0) continue;
            for (int nb = 0; nb < kPhotonClasses; ++nb) {
                const double pb = truncated_pmf(1, c, nb);
                if (pb == 0) continue;
                const double w = pa * pb;
                if (basis == Basis::Z) {
                    for (int xa = 0; xa < 2; ++xa)
                        for (int xb = 0; xb < 2; ++xb) {
                            const auto s = class_split(Basis::Z, xa, xb, na, nb);
                            q += 0.25 * w * s.total;
                            if (xa == xb) err += 0.25 * w * s.total;
                        }
                } else {
                    const auto s = class_split(Basis::X, 0, 0, na, nb);
                    q += w * s.total;
                    err += w * s.total * x_error_given(s);
                }
            }
        }
        gain = q;
        error_rate = q > 0 ? err / q : 0.0;
    }

  private:
    static double poisson_pmf(double lambda, int n) {
        if (lambda == 0.0) return n == 0 ? 1.0 : 0.0;
        return std::exp(-lambda + n * std::log(lambda) - std::lgamma(double(n) + 1.0));
    }
    static double ipow(double x, int n) {
        double r = 1.0;
        for (int i = 0; i < n; ++i) r *= x;
        return r;
    }

    SourceConfig src_a_, src_b_;
    LinkConfig link_;
    double sigma_a_, sigma_b_, dark_;
};

struct SessionResult {
    TallyMatrix tally;
    EventList events;  // empty unless materialization requested
};

namespace detail {

// Draws a multinomial split of `remaining` over `probs` (which need not be
// normalized) by sequential conditional binomials; exact partition.
template <typename Fn>
inline void multinomial_walk(SplitRng& rng, std::uint64_t total, const std::vector<double>& probs,
                             Fn&& consume) {
    double mass_left = 0;
    for (double p : probs) mass_left += p;
    std::uint64_t left = total;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (left == 0) {
            consume(i, 0);
            continue;
        }
        std::uint64_t draw;
        if (i + 1 == probs.size() || mass_left <= probs[i]) {
            draw = left;
        } else {
            draw = rng.binomial(left, std::min(1.0, probs[i] / mass_left));
        }
        consume(i, draw);
        left -= draw;
        mass_left -= probs[i];
    }
}

}  // namespace detail

// Samples one relay session at tally level; optionally materializes the
// matched-basis success events in a seeded shuffled order. Equal (sources,
// link, n_pulses, seed) give bit-identical results.
inline SessionResult sample_session(const SourceConfig& src_a, const SourceConfig& src_b,
                                    const LinkConfig& link, std::uint64_t n_pulses,
                                    std::uint64_t seed, bool oracle = false,
                                    bool materialize = false) {
    if (n_pulses >= (1ULL << 62)) throw SimError("sample_session: pulse count exceeds guard");
    LinkModel model(src_a, src_b, link);
    SessionResult res;
    res.tally.n_pulses = n_pulses;
    for (int i = 0; i < 3; ++i) {
        res.tally.intensity[0][i] = src_a.intensity_value(Intensity(i));
        res.tally.intensity[1][i] = src_b.intensity_value(Intensity(i));
    }
    if (oracle) res.tally.enable_oracle();

    SplitRng root(seed);
    SplitRng draw_rng = root.split(1);
    SplitRng event_rng = root.split(2);

    struct EventGroup {
        Event proto;
        std::uint64_t correct, wrong;
    };
    std::vector<EventGroup> groups;

    // Intensity pair split.
    std::vector<double> pair_probs(9);
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            pair_probs[b * 3 + c] = src_a.prob(Intensity(b)) * src_b.prob(Intensity(c));
    std::vector<std::uint64_t> pair_counts(9, 0);
    detail::multinomial_walk(draw_rng, n_pulses, pair_probs,
                             [&](std::size_t i, std::uint64_t n) { pair_counts[i] = n; });

    std::vector<double> photon_probs(kPhotonClasses * kPhotonClasses);
    for (int b = 0; b < 3; ++b) {
        for (int c = 0; c < 3; ++c) {
            const std::uint64_t n_pair = pair_counts[b * 3 + c];
            const Intensity ib = Intensity(b), ic = Intensity(c);
            const double za = src_a.z_prob(ib), zb = src_b.z_prob(ic);
            std::uint64_t basis_counts[3] = {0, 0, 0};  // ZZ, XX, mismatch
            detail::multinomial_walk(draw_rng, n_pair,
                                     {za * zb, (1 - za) * (1 - zb), za * (1 - zb) + (1 - za) * zb},
                                     [&](std::size_t i, std::uint64_t n) { basis_counts[i] = n; });
            res.tally.mismatch(ib, ic) = basis_counts[2];

            for (int nn = 0; nn < kPhotonClasses * kPhotonClasses; ++nn)
                photon_probs[nn] = model.truncated_pmf(0, ib, nn / kPhotonClasses) *
                                   model.truncated_pmf(1, ic, nn % kPhotonClasses);

            // Z branch: four equally likely bit pairs; equal bits are errors.
            {
                auto& tz = res.tally.at(ib, ic, Basis::Z);
                tz.sent += basis_counts[0];
                std::uint64_t bit_counts[4];
                detail::multinomial_walk(draw_rng, basis_counts[0], {0.25, 0.25, 0.25, 0.25},
                                         [&](std::size_t i, std::uint64_t n) { bit_counts[i] = n; });
                for (int bits = 0; bits < 4; ++bits) {
                    const int xa = bits >> 1, xb = bits & 1;
                    detail::multinomial_walk(
                        draw_rng, bit_counts[bits], photon_probs,
                        [&](std::size_t nn, std::uint64_t cnt) {
                            if (cnt == 0) return;
                            const int na = int(nn) / kPhotonClasses, nb = int(nn) % kPhotonClasses;
                            const auto cls = model.class_split(Basis::Z, xa, xb, na, nb);
                            const std::uint64_t m = draw_rng.binomial(cnt, cls.total);
                            if (m == 0) return;
                            tz.success += m;
                            const bool is_err = xa == xb;
                            if (is_err) tz.errors += m;
                            if (res.tally.oracle) {
                                res.tally.ph_success(ib, ic, Basis::Z, na, nb) += m;
                                if (is_err) res.tally.ph_errors(ib, ic, Basis::Z, na, nb) += m;
                            }
                            if (materialize) {
                                Event e{ib, ic, Basis::Z, xa != 0, xb != 0};
                                groups.push_back({e, is_err ? 0 : m, is_err ? m : 0});
                            }
                        });
                }
            }

            // X branch: bins are uniform so bit values do not affect outcomes;
            // the error split follows the visibility rule per photon class.
            {
                auto& tx = res.tally.at(ib, ic, Basis::X);
                tx.sent += basis_counts[1];
                detail::multinomial_walk(
                    draw_rng, basis_counts[1], photon_probs,
                    [&](std::size_t nn, std::uint64_t cnt) {
                        if (cnt == 0) return;
                        const int na = int(nn) / kPhotonClasses, nb = int(nn) % kPhotonClasses;
                        const auto cls = model.class_split(Basis::X, 0, 0, na, nb);
                        const std::uint64_t m = draw_rng.binomial(cnt, cls.total);
                        if (m == 0) return;
                        tx.success += m;
                        std::uint64_t split[3] = {0, 0, 0};
                        detail::multinomial_walk(draw_rng, m, {cls.pure11, cls.multi, cls.rest},
                                                 [&](std::size_t i, std::uint64_t n) { split[i] = n; });
                        const double v = link.visibility;
                        const double perr[3] = {(1.0 - v) / 2.0, 0.5 - v / 4.0, 0.5};
                        std::uint64_t errs = 0;
                        for (int i = 0; i < 3; ++i) errs += draw_rng.binomial(split[i], perr[i]);
                        tx.errors += errs;
                        if (res.tally.oracle) {
                            res.tally.ph_success(ib, ic, Basis::X, na, nb) += m;
                            res.tally.ph_errors(ib, ic, Basis::X, na, nb) += errs;
                        }
                        if (materialize) {
                            Event e{ib, ic, Basis::X, false, false};
                            groups.push_back({e, m - errs, errs});
                        }
                    });
            }
        }
    }

    if (materialize) {
        std::uint64_t total = 0;
        for (const auto& g : groups) total += g.correct + g.wrong;
        res.events.reserve(total);
        for (const auto& g : groups) {
            for (std::uint64_t i = 0; i < g.correct + g.wrong; ++i) {
                Event e = g.proto;
                const bool is_err = i >= g.correct;
                if (e.basis == Basis::X) {
                    e.bit_a = event_rng.bernoulli(0.5);
                    e.bit_b_raw = e.bit_a == is_err;  // anti-correlated unless error
                }
                res.events.push_back(e.pack());
            }
        }
        event_rng.shuffle(res.events);
    }
    return res;
}

inline SessionResult sample_session(const SourceConfig& src, const LinkConfig& link,
                                    std::uint64_t n_pulses, std::uint64_t seed,
                                    bool oracle = false, bool materialize = false) {
    return sample_session(src, src, link, n_pulses, seed, oracle, materialize);
}

// Disjoint-range parallel form: ranges are sampled with derived seeds and
// merged by count addition in range order.
inline SessionResult sample_session_ranges(const SourceConfig& src_a, const SourceConfig& src_b,
                                           const LinkConfig& link, std::uint64_t n_pulses,
                                           std::uint64_t seed, int parts, bool oracle = false,
                                           bool materialize = false) {
    if (parts <= 0) throw SimError("sample_session_ranges: parts must be positive");
    SplitRng root(seed);
    SessionResult out;
    bool first = true;
    std::uint64_t done = 0;
    for (int i = 0; i < parts; ++i) {
        std::uint64_t n = n_pulses / parts + (std::uint64_t(i) < n_pulses % parts ? 1 : 0);
        done += n;
        auto part = sample_session(src_a, src_b, link, n, root.split(100 + std::uint64_t(i)).seed_key(),
                                   oracle, materialize);
        if (first) {
            out = std::move(part);
            first = false;
        } else {
            out.tally.merge(part.tally);
            out.events.insert(out.events.end(), part.events.begin(), part.events.end());
        }
    }
    (void)done;
    return out;
}

// Sifted, basis-matched data with the anti-correlation flip applied to side b.
// The singlet outcome anti-correlates both bases, so the flip convention is
// uniform; a mismatch after flipping is an error.
struct SiftedData {
    Bitstring a[3][3][2], b[3][3][2];

    Bitstring& side_a(Intensity x, Intensity y, Basis beta) { return a[int(x)][int(y)][int(beta)]; }
    Bitstring& side_b(Intensity x, Intensity y, Basis beta) { return b[int(x)][int(y)][int(beta)]; }
    const Bitstring& side_a(Intensity x, Intensity y, Basis beta) const {
        return a[int(x)][int(y)][int(beta)];
    }
    const Bitstring& side_b(Intensity x, Intensity y, Basis beta) const {
        return b[int(x)][int(y)][int(beta)];
    }
};

inline SiftedData sift_anticorrelated(const EventList& events) {
    SiftedData out;
    for (std::uint8_t packed : events) {
        Event e = Event::unpack(packed);
        out.side_a(e.ia, e.ib, e.basis).push_back(e.bit_a);
        out.side_b(e.ia, e.ib, e.basis).push_back(!e.bit_b_raw);
    }
    return out;
}

// Party-local views: what each sender knows per success (its own intensity,
// basis, bit), and what it announces (intensity and basis only).
struct PartyView {
    std::vector<std::uint8_t> packed;  // intensity(2) | basis(1) | bit(1)

    static std::uint8_t pack(Intensity v, Basis b, bool bit) {
        return std::uint8_t(int(v) | (int(b) << 2) | (int(bit) << 3));
    }
    Intensity intensity(std::size_t i) const { return Intensity(packed[i] & 3); }
    Basis basis(std::size_t i) const { return Basis((packed[i] >> 2) & 1); }
    bool bit(std::size_t i) const { return (packed[i] >> 3) & 1; }
    std::size_t size() const { return packed.size(); }
};

inline PartyView make_view(const EventList& events, int side) {
    PartyView v;
    v.packed.reserve(events.size());
    for (std::uint8_t p : events) {
        Event e = Event::unpack(p);
        if (side == 0)
            v.packed.push_back(PartyView::pack(e.ia, e.basis, e.bit_a));
        else
            v.packed.push_back(PartyView::pack(e.ib, e.basis, e.bit_b_raw));
    }
    return v;
}

// Basis/intensity announcement: the view with the bit masked off.
inline std::vector<std::uint8_t> make_announce(const PartyView& v) {
    std::vector<std::uint8_t> a(v.packed.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = v.packed[i] & 7;
    return a;
}

// Per-setting success indices both parties derive identically from the two
// announcements. Both senders stored their choices at both-basis matched
// positions only, so indices line up by construction.
struct LinkSiftIndex {
    std::vector<std::uint32_t> idx[3][3][2];

    static LinkSiftIndex build(const std::vector<std::uint8_t>& ann_a,
                               const std::vector<std::uint8_t>& ann_b) {
        if (ann_a.size() != ann_b.size()) throw SimError("sift: announcement streams differ in length");
        LinkSiftIndex out;
        for (std::size_t i = 0; i < ann_a.size(); ++i) {
            const Basis ba = Basis((ann_a[i] >> 2) & 1), bb = Basis((ann_b[i] >> 2) & 1);
            if (ba != bb) continue;
            out.idx[ann_a[i] & 3][ann_b[i] & 3][int(ba)].push_back(std::uint32_t(i));
        }
        return out;
    }
};

inline Bitstring view_bits(const PartyView& v, const std::vector<std::uint32_t>& idx, bool flip) {
    Bitstring out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out.set(i, flip ? !v.bit(idx[i]) : v.bit(idx[i]));
    return out;
}

inline void TallyMatrix::serialize(std::ostream& out) const {
    out << "mdiqds-tally v1\n";
    out << "pulses " << n_pulses << "\n";
    out << "oracle " << (oracle ? 1 : 0) << "\n";
    for (int s = 0; s < 2; ++s) {
        out << "intensity " << (s == 0 ? 'a' : 'b');
        for (int i = 0; i < 3; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof buf, " %.9g", intensity[s][i]);
            out << buf;
        }
        out << "\n";
    }
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
            for (int beta = 0; beta < 2; ++beta) {
                const auto& s = at(Intensity(b), Intensity(c), Basis(beta));
                out << "setting " << intensity_name(Intensity(b)) << " " << intensity_name(Intensity(c))
                    << " " << basis_name(Basis(beta)) << " sent " << s.sent << " success " << s.success
                    << " errors " << s.errors << "\n";
            }
            out << "mismatch " << intensity_name(Intensity(b)) << " " << intensity_name(Intensity(c))
                << " " << mismatch(Intensity(b), Intensity(c)) << "\n";
        }
    if (oracle) {
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c)
                for (int beta = 0; beta < 2; ++beta)
                    for (int na = 0; na < kPhotonClasses; ++na)
                        for (int nb = 0; nb < kPhotonClasses; ++nb) {
                            auto s = ph_success(Intensity(b), Intensity(c), Basis(beta), na, nb);
                            auto e = ph_errors(Intensity(b), Intensity(c), Basis(beta), na, nb);
                            if (s == 0 && e == 0) continue;
                            out << "photon " << intensity_name(Intensity(b)) << " "
                                << intensity_name(Intensity(c)) << " " << basis_name(Basis(beta)) << " "
                                << na << " " << nb << " " << s << " " << e << "\n";
                        }
    }
    out << "end\n";
}

namespace detail {
inline Intensity parse_intensity(const std::string& s) {
    if (s == "w") return Intensity::vac;
    if (s == "nu") return Intensity::dec;
    if (s == "mu") return Intensity::sig;
    throw SimError("tally parse: bad intensity name '" + s + "'");
}
inline Basis parse_basis(const std::string& s) {
    if (s == "Z") return Basis::Z;
    if (s == "X") return Basis::X;
    throw SimError("tally parse: bad basis name '" + s + "'");
}
}  // namespace detail

inline TallyMatrix TallyMatrix::parse(std::istream& in) {
    TallyMatrix t;
    std::string line;
    if (!std::getline(in, line) || line != "mdiqds-tally v1")
        throw SimError("tally parse: missing header");
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "end") {
            saw_end = true;
            break;
        } else if (tag == "pulses") {
            ls >> t.n_pulses;
        } else if (tag == "oracle") {
            int v = 0;
            ls >> v;
            if (v) t.enable_oracle();
        } else if (tag == "intensity") {
            std::string side;
            ls >> side;
            int s = side == "a" ? 0 : 1;
            ls >> t.intensity[s][0] >> t.intensity[s][1] >> t.intensity[s][2];
        } else if (tag == "setting") {
            std::string b, c, beta, kw;
            ls >> b >> c >> beta;
            auto& st = t.at(detail::parse_intensity(b), detail::parse_intensity(c),
                            detail::parse_basis(beta));
            ls >> kw >> st.sent >> kw >> st.success >> kw >> st.errors;
        } else if (tag == "mismatch") {
            std::string b, c;
            std::uint64_t n;
            ls >> b >> c >> n;
            t.mismatch(detail::parse_intensity(b), detail::parse_intensity(c)) = n;
        } else if (tag == "photon") {
            std::string b, c, beta;
            int na, nb;
            std::uint64_t s, e;
            ls >> b >> c >> beta >> na >> nb >> s >> e;
            if (!t.oracle) throw SimError("tally parse: photon row without oracle flag");
            t.ph_success(detail::parse_intensity(b), detail::parse_intensity(c),
                         detail::parse_basis(beta), na, nb) = s;
            t.ph_errors(detail::parse_intensity(b), detail::parse_intensity(c),
                        detail::parse_basis(beta), na, nb) = e;
        } else {
            throw SimError("tally parse: unknown tag '" + tag + "'");
        }
        if (ls.fail()) throw SimError("tally parse: malformed line: " + line);
    }
    if (!saw_end) throw SimError("tally parse: missing end marker");
    return t;
}

}  // namespace mdiqds::sim
