#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mdiqds/entropy.hpp"
#include "mdiqds/lp.hpp"
#include "mdiqds/quantum_sim.hpp"
#include "mdiqds/stats.hpp"

namespace mdiqds::decoy {

using sim::Basis;
using sim::Intensity;
using sim::TallyMatrix;

struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Concentration inequality behind every interval below. The Hoeffding radius
// sqrt((n/2) ln(1/eps)) is the default; the KL form inverts the exact
// Chernoff exponent instead and wins by orders of magnitude on settings
// whose rates are far from 1/2, which is what makes short sessions usable.
enum class Deviation { hoeffding, kl };

// Per-setting failure probabilities plus the composed total. The default is
// a uniform split of eps_qkd over the four key settings: half of each
// setting's share goes to correctness, the rest is divided over the seven
// secrecy atoms weighted as they appear in the eps_sec composition.
struct EpsilonBudget {
    double eps_qkd = 8e-8;
    double eps_cor = 1e-8;
    double eps_pa = 8e-8 / 96;
    double eps_prime = 8e-8 / 96;
    double eps_hat = 8e-8 / 96;
    double eps_beta = 8e-8 / 96;
    double eps_0 = 8e-8 / 96;
    double eps_1 = 8e-8 / 96;
    double eps_e = 8e-8 / 96;

    static EpsilonBudget uniform(double eps_qkd) {
        EpsilonBudget b;
        b.eps_qkd = eps_qkd;
        b.eps_cor = eps_qkd / 8.0;
        const double atom = eps_qkd / 96.0;
        b.eps_pa = b.eps_prime = b.eps_hat = b.eps_beta = b.eps_0 = b.eps_1 = b.eps_e = atom;
        return b;
    }

    double eps_sec() const {
        return 2.0 * (eps_prime + 2.0 * eps_e + eps_hat) + eps_beta + eps_0 + eps_1 + eps_pa;
    }

    void validate() const {
        for (double e : {eps_qkd, eps_cor, eps_pa, eps_prime, eps_hat, eps_beta, eps_0, eps_1, eps_e})
            if (!(e > 0.0 && e < 1.0))
                throw EstimationError("EpsilonBudget: every term must lie in (0,1)");
        if (4.0 * (eps_cor + eps_sec()) > eps_qkd * (1.0 + 1e-12))
            throw EstimationError("EpsilonBudget: composed eps_cor + eps_sec exceeds eps_qkd");
    }
};

// The four key settings in report order.
inline constexpr std::array<std::pair<Intensity, Intensity>, 4> kKeySettings = {{
    {Intensity::sig, Intensity::sig},
    {Intensity::sig, Intensity::dec},
    {Intensity::dec, Intensity::sig},
    {Intensity::dec, Intensity::dec},
}};

inline int key_setting_index(Intensity b, Intensity c) {
    for (int i = 0; i < 4; ++i)
        if (kKeySettings[i].first == b && kKeySettings[i].second == c) return i;
    throw EstimationError("not a key setting");
}

inline std::string setting_label(Intensity b, Intensity c) {
    return std::string(sim::intensity_name(b)) + "," + sim::intensity_name(c);
}

struct SettingBounds {
    Intensity b = Intensity::sig, c = Intensity::sig;
    std::uint64_t sifted = 0;          // observed Z successes at (b,c)
    std::uint64_t sifted_errors = 0;   // observed Z errors at (b,c)
    double n0 = 0;                     // lower bound, reference arm vacuum events
    double n1 = 0;                     // lower bound, (1,1) photon events
    double e1 = 0.5;                   // upper bound, single-photon phase-error rate
    double leak_ec = 0;                // reconciliation disclosure in bits
};

struct FiniteKeyBounds {
    std::array<SettingBounds, 4> s;
    double y11_lower = 0;  // shared single-photon yield bound behind the n1 chain

    SettingBounds& at(Intensity b, Intensity c) { return s[key_setting_index(b, c)]; }
    const SettingBounds& at(Intensity b, Intensity c) const { return s[key_setting_index(b, c)]; }
};

namespace detail {

inline void check_system(const TallyMatrix& t) {
    for (int side = 0; side < 2; ++side) {
        const double w = t.intensity[side][0], nu = t.intensity[side][1], mu = t.intensity[side][2];
        if (w != 0.0) throw EstimationError("decoy system infeasible: vacuum intensity not 0");
        if (!(nu > 0.0) || !(mu > nu))
            throw EstimationError("decoy system infeasible: need 0 < nu < mu");
    }
}

struct Rate {
    double lower, upper;
};

inline Rate rate_interval(double observed, double n, double eps, Deviation dev) {
    if (dev == Deviation::kl)
        return {kl_bound(observed, n, eps, Direction::lower) / n,
                kl_bound(observed, n, eps, Direction::upper) / n};
    return {concentration_bound(observed, n, eps, Direction::lower) / n,
            concentration_bound(observed, n, eps, Direction::upper) / n};
}

// Two-sided interval on a per-pulse success rate; vacuous when nothing was
// sent.
inline Rate gain_interval(const TallyMatrix& t, Intensity b, Intensity c, Basis beta, double eps,
                          Deviation dev = Deviation::hoeffding) {
    const auto& st = t.at(b, c, beta);
    if (st.sent == 0) return {0.0, 1.0};
    return rate_interval(double(st.success), double(st.sent), eps, dev);
}

// The same interval on a setting's per-pulse error rate.
inline Rate error_interval(const TallyMatrix& t, Intensity b, Intensity c, Basis beta, double eps,
                           Deviation dev) {
    const auto& st = t.at(b, c, beta);
    if (st.sent == 0) return {0.0, 1.0};
    return rate_interval(double(st.errors), double(st.sent), eps, dev);
}

// Deviation for the step from a bounded mean to the realized count inside
// one setting. Hoeffding pays the radius over the sent count; the Chernoff
// form scales with the mean itself and is monotone in it, so feeding it a
// one-sided mean bound keeps the step sound.
inline double transfer_delta(double mean, double sent, double eps, Deviation dev, Direction dir) {
    if (dev == Deviation::kl)
        return dir == Direction::lower ? chernoff_lower_delta(mean, eps)
                                       : chernoff_upper_delta(mean, eps);
    return sent > 0.0 ? hoeffding_delta(sent, eps) : 0.0;
}

inline double p0(double lambda) { return std::exp(-lambda); }
inline double p1(double lambda) { return lambda * std::exp(-lambda); }

}  // namespace detail

// Lower bounds on the number of reference-arm vacuum events inside each key
// setting's sifted Z sample. The (w,c) settings measure the vacuum gain
// directly; two deviation slices of eps_0 cover the anchor and the transfer
// to the realized count.
inline std::array<double, 4> estimate_vacuum(const TallyMatrix& t, const EpsilonBudget& budget,
                                             Deviation dev = Deviation::hoeffding) {
    detail::check_system(t);
    budget.validate();
    std::array<double, 4> out{};
    for (int i = 0; i < 4; ++i) {
        const auto [b, c] = kKeySettings[i];
        const double lambda_b = t.intensity[0][int(b)];
        const double g0 =
            detail::gain_interval(t, Intensity::vac, c, Basis::Z, budget.eps_0 / 2, dev).lower;
        const auto& key = t.at(b, c, Basis::Z);
        const double mean = double(key.sent) * detail::p0(lambda_b) * g0;
        const double step =
            detail::transfer_delta(mean, double(key.sent), budget.eps_0 / 2, dev, Direction::lower);
        out[i] = std::min(std::max(0.0, mean - step), double(key.success));
    }
    return out;
}

struct SinglePhotonBounds {
    std::array<double, 4> n1{};
    double y11_lower = 0;
};

// Gain combination that isolates the both-arms-occupied yields:
//   R^{bc} = Q^{bc} - e^{-b} Q^{wc} - e^{-c} Q^{bw} + e^{-b-c} Q^{ww}.
// Bounding R at nu,nu from below and at mu,mu from above pins Y_11 through
// the usual three-intensity comparison; nine eps_1 slices cover the eight
// gain deviations and the realized-count step.
inline SinglePhotonBounds estimate_single_photon(const TallyMatrix& t, const EpsilonBudget& budget,
                                                 Deviation dev = Deviation::hoeffding) {
    detail::check_system(t);
    budget.validate();
    const double nu = t.intensity[0][1], mu = t.intensity[0][2];
    const double nu2 = t.intensity[1][1], mu2 = t.intensity[1][2];
    if (std::abs(nu - nu2) > 1e-12 || std::abs(mu - mu2) > 1e-12)
        throw EstimationError("decoy estimation requires matched intensities on both arms");
    const double slice = budget.eps_1 / 9.0;
    using sim::Intensity;
    const auto gi = [&](Intensity b, Intensity c) {
        return detail::gain_interval(t, b, c, Basis::Z, slice, dev);
    };

    const double r_nn_low = gi(Intensity::dec, Intensity::dec).lower -
                            std::exp(-nu) * gi(Intensity::vac, Intensity::dec).upper -
                            std::exp(-nu) * gi(Intensity::dec, Intensity::vac).upper +
                            std::exp(-2 * nu) * gi(Intensity::vac, Intensity::vac).lower;
    const double r_mm_up = gi(Intensity::sig, Intensity::sig).upper -
                           std::exp(-mu) * gi(Intensity::vac, Intensity::sig).lower -
                           std::exp(-mu) * gi(Intensity::sig, Intensity::vac).lower +
                           std::exp(-2 * mu) * gi(Intensity::vac, Intensity::vac).upper;

    // e^{b+c} R^{bc} = sum_{n,m>=1} (b^n/n!)(c^m/m!) Y_nm, and every n+m>=3
    // term shrinks by at least (nu/mu)^3 going from mu to nu.
    const double ratio3 = (nu * nu * nu) / (mu * mu * mu);
    const double numer = std::exp(2 * nu) * std::max(0.0, r_nn_low) -
                         ratio3 * std::exp(2 * mu) * std::max(0.0, r_mm_up);
    const double denom = nu * nu * (1.0 - nu / mu);
    SinglePhotonBounds out;
    out.y11_lower = std::min(1.0, std::max(0.0, numer / denom));

    for (int i = 0; i < 4; ++i) {
        const auto [b, c] = kKeySettings[i];
        const auto& key = t.at(b, c, Basis::Z);
        const double lb = t.intensity[0][int(b)], lc = t.intensity[1][int(c)];
        const double mean = double(key.sent) * detail::p1(lb) * detail::p1(lc) * out.y11_lower;
        const double step =
            detail::transfer_delta(mean, double(key.sent), slice, dev, Direction::lower);
        out.n1[i] = std::min(std::max(0.0, mean - step), double(key.success));
    }
    return out;
}

// Upper bounds on the single-photon phase-error rate. The X-basis error
// gains combine exactly like the yields:
//   V^{bc} = EQ^{bc} - e^{-b} EQ^{wc} - e^{-c} EQ^{bw} + e^{-b-c} EQ^{ww}
// cancels every empty-arm term (a one-arm n-photon pulse errs at the same
// rate whether the other arm said vacuum or decoy), so e^{2nu} V^{nn} / nu^2
// upper-bounds the (1,1) error yield. Dividing by the Z-side y11 uses the
// BSM's basis independence on (1,1) pairs, which the oracle tests pin. Four
// error-gain slices plus four per-setting transfer slices out of eps_e.
inline std::array<double, 4> estimate_phase_error(const TallyMatrix& t,
                                                  const SinglePhotonBounds& sp,
                                                  const EpsilonBudget& budget,
                                                  Deviation dev = Deviation::hoeffding) {
    detail::check_system(t);
    budget.validate();
    const double nu = t.intensity[0][1];
    const double slice = budget.eps_e / 8.0;
    const auto ei = [&](Intensity b, Intensity c) {
        return detail::error_interval(t, b, c, Basis::X, slice, dev);
    };
    const auto& x = t.at(Intensity::dec, Intensity::dec, Basis::X);
    double e1_common = 0.5;
    if (x.sent > 0 && sp.y11_lower > 0) {
        const double v_up = ei(Intensity::dec, Intensity::dec).upper -
                            std::exp(-nu) * ei(Intensity::vac, Intensity::dec).lower -
                            std::exp(-nu) * ei(Intensity::dec, Intensity::vac).lower +
                            std::exp(-2 * nu) * ei(Intensity::vac, Intensity::vac).upper;
        const double ey11_up = std::exp(2 * nu) * std::max(0.0, v_up) / (nu * nu);
        e1_common = std::min(0.5, ey11_up / sp.y11_lower);
    }
    std::array<double, 4> out{};
    for (int i = 0; i < 4; ++i) {
        if (sp.n1[i] <= 0) {
            out[i] = 0.5;
            continue;
        }
        const double transfer =
            detail::transfer_delta(e1_common * sp.n1[i], sp.n1[i], slice, dev, Direction::upper) /
            sp.n1[i];
        out[i] = std::min(0.5, e1_common + transfer);
    }
    return out;
}

inline FiniteKeyBounds estimate_all(const TallyMatrix& t, const EpsilonBudget& budget,
                                    Deviation dev = Deviation::hoeffding) {
    FiniteKeyBounds out;
    const auto n0 = estimate_vacuum(t, budget, dev);
    const auto sp = estimate_single_photon(t, budget, dev);
    const auto e1 = estimate_phase_error(t, sp, budget, dev);
    out.y11_lower = sp.y11_lower;
    for (int i = 0; i < 4; ++i) {
        auto& s = out.s[i];
        s.b = kKeySettings[i].first;
        s.c = kKeySettings[i].second;
        const auto& key = t.at(s.b, s.c, Basis::Z);
        s.sifted = key.success;
        s.sifted_errors = key.errors;
        s.n0 = n0[i];
        s.n1 = sp.n1[i];
        s.e1 = e1[i];
    }
    return out;
}

// Alternative single-photon-yield bound through an explicit linear program
// over truncated yield variables; same gain intervals, typically a little
// tighter than the closed form. Returns the Y_11 lower bound, or 0 when the
// intervals turn out inconsistent.
inline double lp_single_photon_yield(const TallyMatrix& t, const EpsilonBudget& budget,
                                     int photon_cap = 6) {
    detail::check_system(t);
    if (photon_cap < 2 || photon_cap > 10)
        throw EstimationError("lp_single_photon_yield: photon cap out of range");
    const int dim = photon_cap + 1;
    const int nvars = dim * dim;
    const auto var = [dim](int n, int m) { return n * dim + m; };
    const double slice = budget.eps_1 / 18.0;

    std::vector<double> c(nvars, 0.0);
    c[var(1, 1)] = 1.0;
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    const auto pmf = [](double lambda, int n) {
        if (lambda == 0.0) return n == 0 ? 1.0 : 0.0;
        return std::exp(-lambda + n * std::log(lambda) - std::lgamma(double(n) + 1));
    };
    for (int ib = 0; ib < 3; ++ib)
        for (int ic = 0; ic < 3; ++ic) {
            const double lb = t.intensity[0][ib], lc = t.intensity[1][ic];
            std::vector<double> row(nvars, 0.0);
            double head = 0;
            for (int n = 0; n < dim; ++n)
                for (int m = 0; m < dim; ++m) {
                    row[var(n, m)] = pmf(lb, n) * pmf(lc, m);
                    head += row[var(n, m)];
                }
            const auto q = detail::gain_interval(t, Intensity(ib), Intensity(ic), Basis::Z, slice);
            a.push_back(row);
            b.push_back(q.upper);  // truncated sum <= full gain <= upper
            for (auto& v : row) v = -v;
            a.push_back(std::move(row));
            b.push_back(-(q.lower - (1.0 - head)));  // truncated sum >= lower - tail mass
        }
    for (int j = 0; j < nvars; ++j) {
        std::vector<double> row(nvars, 0.0);
        row[j] = 1.0;
        a.push_back(std::move(row));
        b.push_back(1.0);
    }
    const auto res = lp::solve_min(std::move(c), std::move(a), std::move(b));
    if (res.status != lp::LpResult::Status::optimal) return 0.0;
    return std::min(1.0, std::max(0.0, res.objective));
}

struct KeyLengthReport {
    double ell = 0;                        // total, settings floored at zero
    std::array<double, 4> contribution{};  // per setting, before flooring
    double eps_cor_total = 0;
    double eps_sec_total = 0;
};

// Extractable key length; every deviation and epsilon already sits inside
// the per-setting bounds, so this is plain arithmetic.
inline KeyLengthReport key_length(const FiniteKeyBounds& bounds, const EpsilonBudget& budget,
                                  bool floor_per_setting = true) {
    budget.validate();
    KeyLengthReport rep;
    for (int i = 0; i < 4; ++i) {
        const auto& s = bounds.s[i];
        if (s.e1 < 0 || s.e1 > 0.5) throw EstimationError("key_length: e1 outside [0,1/2]");
        if (s.leak_ec < 0) throw EstimationError("key_length: negative leak_EC");
        double term = s.n0 + s.n1 * (1.0 - binary_entropy(s.e1)) - s.leak_ec;
        term -= std::log2(8.0 / budget.eps_cor);
        term -= 2.0 * std::log2(2.0 / (budget.eps_prime * budget.eps_hat));
        term -= 2.0 * std::log2(1.0 / (2.0 * budget.eps_pa));
        rep.contribution[i] = term;
        rep.ell += floor_per_setting ? std::max(0.0, term) : term;
    }
    if (!floor_per_setting) rep.ell = std::max(0.0, rep.ell);
    rep.eps_cor_total = 4.0 * budget.eps_cor;
    rep.eps_sec_total = 4.0 * budget.eps_sec();
    return rep;
}

// Fixed-column bounds report, also accepted back as analyze input.
inline void write_table1(std::ostream& out, const FiniteKeyBounds& bounds) {
    out << "mdiqds-table1 v1\n";
    out << "setting n_0 n_1 e_1 leak_EC\n";
    char line[160];
    for (const auto& s : bounds.s) {
        std::snprintf(line, sizeof line, "%s %.10g %.10g %.10g %.10g\n",
                      setting_label(s.b, s.c).c_str(), s.n0, s.n1, s.e1, s.leak_ec);
        out << line;
    }
    out << "end\n";
}

inline FiniteKeyBounds parse_table1(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "mdiqds-table1 v1")
        throw EstimationError("table1 parse: missing header");
    if (!std::getline(in, line) || line != "setting n_0 n_1 e_1 leak_EC")
        throw EstimationError("table1 parse: missing column row");
    FiniteKeyBounds out;
    std::array<bool, 4> seen{};
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line == "end") {
            for (int i = 0; i < 4; ++i)
                if (!seen[i]) throw EstimationError("table1 parse: missing setting row");
            return out;
        }
        std::istringstream ls(line);
        std::string label;
        double n0, n1, e1, leak;
        ls >> label >> n0 >> n1 >> e1 >> leak;
        if (ls.fail()) throw EstimationError("table1 parse: malformed row: " + line);
        int idx = -1;
        for (int i = 0; i < 4; ++i)
            if (setting_label(kKeySettings[i].first, kKeySettings[i].second) == label) idx = i;
        if (idx < 0) throw EstimationError("table1 parse: unknown setting '" + label + "'");
        auto& s = out.s[idx];
        s.b = kKeySettings[idx].first;
        s.c = kKeySettings[idx].second;
        s.n0 = n0;
        s.n1 = n1;
        s.e1 = e1;
        s.leak_ec = leak;
        seen[idx] = true;
    }
    throw EstimationError("table1 parse: missing end marker");
}

}  // namespace mdiqds::decoy
