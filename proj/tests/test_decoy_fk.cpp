#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mdiqds/decoy_fk.hpp"

using namespace mdiqds;
using namespace mdiqds::decoy;
using sim::Basis;
using sim::Intensity;
using sim::TallyMatrix;

namespace {

// Bounds filled with the published metropolitan-run values; the expected key
// length 4466957.56 was computed independently from the same arithmetic.
FiniteKeyBounds published_bounds() {
    FiniteKeyBounds b;
    const double n1[4] = {13144467, 4208999, 4208978, 1346138};
    const double e1[4] = {0.2057, 0.2061, 0.2061, 0.2072};
    const double leak[4] = {764378, 446414, 290251, 133085};
    for (int i = 0; i < 4; ++i) {
        b.s[i].b = kKeySettings[i].first;
        b.s[i].c = kKeySettings[i].second;
        b.s[i].n0 = 0;
        b.s[i].n1 = n1[i];
        b.s[i].e1 = e1[i];
        b.s[i].leak_ec = leak[i];
    }
    return b;
}

// A tally whose gains follow an exact both-arms-occupied yield law:
// Y_nm = y for n,m >= 1, else 0. Counts are huge so the deviation terms
// are relatively tiny and the estimators can be checked against y.
TallyMatrix ideal_tally(double y, double x_error) {
    TallyMatrix t;
    const double nu = 0.1, mu = 0.5;
    for (int side = 0; side < 2; ++side) {
        t.intensity[side][0] = 0.0;
        t.intensity[side][1] = nu;
        t.intensity[side][2] = mu;
    }
    const std::uint64_t sent = 1000000000000ULL;  // 1e12 per setting and basis
    t.n_pulses = sent * 18;
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
            const double lb = t.intensity[0][b], lc = t.intensity[1][c];
            const double gain = (1.0 - std::exp(-lb)) * (1.0 - std::exp(-lc)) * y;
            for (int beta = 0; beta < 2; ++beta) {
                auto& s = t.at(Intensity(b), Intensity(c), Basis(beta));
                s.sent = sent;
                s.success = std::uint64_t(std::llround(gain * double(sent)));
                s.errors = 0;
            }
        }
    auto& x = t.at(Intensity::dec, Intensity::dec, Basis::X);
    x.errors = std::uint64_t(std::llround(x_error * double(x.success)));
    return t;
}

}  // namespace

TEST_CASE("published bounds reproduce the frozen key length") {
    const auto budget = EpsilonBudget::uniform(8e-8);
    const auto rep = key_length(published_bounds(), budget);
    CHECK(rep.ell == Catch::Approx(4466957.56).margin(2.0));
    // stays within the quoted value's neighborhood
    CHECK(std::abs(rep.ell - 4724819.0) / 4724819.0 < 0.06);
    CHECK(rep.eps_cor_total == Catch::Approx(4e-8));
    CHECK(rep.eps_cor_total + rep.eps_sec_total <= 8e-8 * (1 + 1e-9));
    for (double c : rep.contribution) CHECK(c > 0.0);
}

TEST_CASE("uniform budget composes tightly") {
    const auto b = EpsilonBudget::uniform(8e-8);
    CHECK_NOTHROW(b.validate());
    CHECK(4.0 * (b.eps_cor + b.eps_sec()) == Catch::Approx(8e-8));
    auto bad = b;
    bad.eps_cor = 8e-8;  // blows the composition
    CHECK_THROWS_AS(bad.validate(), EstimationError);
    auto zero = b;
    zero.eps_1 = 0.0;
    CHECK_THROWS_AS(zero.validate(), EstimationError);
}

TEST_CASE("estimators recover an exact two-arm yield law") {
    const double y = 0.4;
    const auto t = ideal_tally(y, 0.3);
    const auto budget = EpsilonBudget::uniform(8e-8);
    const auto bounds = estimate_all(t, budget);

    // closed-form Y11 bound: below the truth, and within the structural gap
    // left by the (nu/mu)^3 multiphoton subtraction (about 4% here)
    CHECK(bounds.y11_lower <= y * (1 + 1e-9));
    CHECK(bounds.y11_lower > 0.9 * y);

    for (int i = 0; i < 4; ++i) {
        const auto& s = bounds.s[i];
        const double lb = t.intensity[0][int(s.b)], lc = t.intensity[1][int(s.c)];
        const double true_n1 =
            double(s.sifted) / ((1 - std::exp(-lb)) * (1 - std::exp(-lc))) * lb * std::exp(-lb) * lc * std::exp(-lc);
        CHECK(s.n1 <= true_n1 * (1 + 1e-9));
        CHECK(s.n1 > 0.85 * true_n1);
        CHECK(s.n0 >= 0.0);
        // phase error upper bound covers the planted X error rate
        CHECK(s.e1 >= 0.3);
        CHECK(s.e1 <= 0.5);
    }
}

TEST_CASE("LP yield bound is at least as tight as the closed form") {
    const double y = 0.4;
    const auto t = ideal_tally(y, 0.3);
    const auto budget = EpsilonBudget::uniform(8e-8);
    const auto closed = estimate_single_photon(t, budget);
    const double lp = lp_single_photon_yield(t, budget);
    CHECK(lp <= y * (1 + 1e-6));
    CHECK(lp >= closed.y11_lower - 0.02 * y);
    CHECK_THROWS_AS(lp_single_photon_yield(t, budget, 1), EstimationError);
}

TEST_CASE("more X errors can only shrink the key") {
    const auto budget = EpsilonBudget::uniform(8e-8);
    auto rep_low = key_length(estimate_all(ideal_tally(0.4, 0.10), budget), budget);
    auto rep_high = key_length(estimate_all(ideal_tally(0.4, 0.20), budget), budget);
    CHECK(rep_low.ell > rep_high.ell);
}

TEST_CASE("infeasible decoy systems are refused") {
    auto t = ideal_tally(0.4, 0.1);
    const auto budget = EpsilonBudget::uniform(8e-8);
    auto bad = t;
    bad.intensity[0][0] = 0.01;  // vacuum arm not actually vacuum
    CHECK_THROWS_AS(estimate_all(bad, budget), EstimationError);
    auto swapped = t;
    swapped.intensity[0][1] = 0.5;
    swapped.intensity[0][2] = 0.1;  // nu >= mu
    CHECK_THROWS_AS(estimate_all(swapped, budget), EstimationError);
    auto uneven = t;
    uneven.intensity[1][2] = 0.6;  // arms disagree
    CHECK_THROWS_AS(estimate_single_photon(uneven, budget), EstimationError);
}

TEST_CASE("key length rejects malformed bounds and floors at zero") {
    const auto budget = EpsilonBudget::uniform(8e-8);
    auto b = published_bounds();
    b.s[0].e1 = 0.6;
    CHECK_THROWS_AS(key_length(b, budget), EstimationError);
    b = published_bounds();
    b.s[0].leak_ec = -1;
    CHECK_THROWS_AS(key_length(b, budget), EstimationError);

    b = published_bounds();
    b.s[3].leak_ec = 1e9;  // drives that setting's term far below zero
    const auto floored = key_length(b, budget);
    const auto raw = key_length(b, budget, false);
    CHECK(floored.contribution[3] < 0.0);
    CHECK(floored.ell == Catch::Approx(floored.contribution[0] + floored.contribution[1] +
                                       floored.contribution[2]));
    CHECK(raw.ell < floored.ell);
}

TEST_CASE("empty tallies yield nothing without crashing") {
    TallyMatrix t;
    t.intensity[0][1] = t.intensity[1][1] = 0.1;
    t.intensity[0][2] = t.intensity[1][2] = 0.5;
    const auto budget = EpsilonBudget::uniform(8e-8);
    const auto bounds = estimate_all(t, budget);
    for (const auto& s : bounds.s) {
        CHECK(s.n1 == 0.0);
        CHECK(s.e1 == 0.5);
    }
    const auto rep = key_length(bounds, budget);
    CHECK(rep.ell == 0.0);
}

TEST_CASE("table text round-trips") {
    auto b = published_bounds();
    b.y11_lower = 0.0123;
    std::stringstream ss;
    write_table1(ss, b);
    const auto back = parse_table1(ss);
    for (int i = 0; i < 4; ++i) {
        CHECK(back.s[i].n0 == Catch::Approx(b.s[i].n0));
        CHECK(back.s[i].n1 == Catch::Approx(b.s[i].n1));
        CHECK(back.s[i].e1 == Catch::Approx(b.s[i].e1));
        CHECK(back.s[i].leak_ec == Catch::Approx(b.s[i].leak_ec));
    }
    std::stringstream bad("wrong\n");
    CHECK_THROWS_AS(parse_table1(bad), EstimationError);
    std::stringstream partial("mdiqds-table1 v1\nsetting n_0 n_1 e_1 leak_EC\nsig,sig 0 1 0.1 0\nend\n");
    CHECK_THROWS_AS(parse_table1(partial), EstimationError);
}

TEST_CASE("simulated oracle counts sit inside the estimated bounds") {
    sim::SourceConfig src;
    src.mu = 0.5;
    src.nu = 0.1;
    src.w = 0.0;
    src.p_mu = 0.3;
    src.p_nu = 0.5;
    src.p_w = 0.2;
    src.p_z_decoy = 0.5;
    sim::LinkConfig lnk;
    lnk.loss_a_db = lnk.loss_b_db = lnk.insertion_db = 0.0;
    lnk.det_eff_0 = lnk.det_eff_1 = 0.9;
    lnk.window_eff = 1.0;
    lnk.dark_rate_hz = 10.0;
    lnk.visibility = 0.98;
    auto res = sim::sample_session(src, lnk, 4000000, 2718, true);
    const auto budget = EpsilonBudget::uniform(8e-8);
    const auto bounds = estimate_all(res.tally, budget);
    for (const auto& s : bounds.s) {
        const auto true_n1 = res.tally.true_n1(s.b, s.c, Basis::Z);
        CHECK(s.n1 <= double(true_n1));
    }
    // the X-basis singles error rate is what e1 upper-bounds
    const auto x1 = res.tally.true_n1(Intensity::dec, Intensity::dec, Basis::X);
    const auto x1e = res.tally.true_n1_errors(Intensity::dec, Intensity::dec, Basis::X);
    REQUIRE(x1 > 0);
    const double realized = double(x1e) / double(x1);
    CHECK(bounds.at(Intensity::dec, Intensity::dec).e1 >= realized - 0.05);
}
