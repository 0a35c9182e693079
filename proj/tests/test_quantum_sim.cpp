#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mdiqds/quantum_sim.hpp"

using namespace mdiqds;
using namespace mdiqds::sim;

namespace {

SourceConfig desk_source() {
    SourceConfig s;
    s.mu = 0.5;
    s.nu = 0.1;
    s.w = 0.0;
    s.p_mu = 0.3;
    s.p_nu = 0.5;
    s.p_w = 0.2;
    s.p_z_decoy = 0.5;
    s.rep_rate_hz = 75e6;
    return s;
}

LinkConfig desk_link() {
    LinkConfig l;
    l.loss_a_db = 0.0;
    l.loss_b_db = 0.0;
    l.insertion_db = 0.0;
    l.det_eff_0 = 0.9;
    l.det_eff_1 = 0.9;
    l.window_eff = 1.0;
    l.dark_rate_hz = 10.0;
    l.visibility = 0.98;
    return l;
}

}  // namespace

TEST_CASE("every pulse lands in exactly one bucket") {
    auto res = sample_session(desk_source(), desk_link(), 200000, 7);
    const auto& t = res.tally;
    CHECK(t.n_pulses == 200000);
    CHECK(t.total_sent() == t.n_pulses);
    // success and errors never exceed sent
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            for (int beta = 0; beta < 2; ++beta) {
                const auto& s = t.at(Intensity(b), Intensity(c), Basis(beta));
                REQUIRE(s.success <= s.sent);
                REQUIRE(s.errors <= s.success);
            }
}

TEST_CASE("equal seeds give identical sessions") {
    auto r1 = sample_session(desk_source(), desk_link(), 50000, 42, true, true);
    auto r2 = sample_session(desk_source(), desk_link(), 50000, 42, true, true);
    CHECK(r1.tally == r2.tally);
    CHECK(r1.events == r2.events);
    auto r3 = sample_session(desk_source(), desk_link(), 50000, 43, true, true);
    CHECK_FALSE(r1.tally == r3.tally);
}

TEST_CASE("sampled rates track the analytic model") {
    const auto src = desk_source();
    const auto lnk = desk_link();
    LinkModel model(src, src, lnk);
    const std::uint64_t n = 2000000;
    auto res = sample_session(src, lnk, n, 99);
    const auto& t = res.tally;

    // signal-signal Z and decoy-decoy X, the two settings the protocol leans on
    struct Probe {
        Intensity b, c;
        Basis beta;
    } probes[] = {{Intensity::sig, Intensity::sig, Basis::Z},
                  {Intensity::dec, Intensity::dec, Basis::X},
                  {Intensity::dec, Intensity::sig, Basis::Z}};
    for (const auto& p : probes) {
        double gain = 0, err_rate = 0;
        model.setting_rates(p.b, p.c, p.beta, gain, err_rate);
        const auto& s = t.at(p.b, p.c, p.beta);
        REQUIRE(s.sent > 1000);
        const double shat = double(s.success) / double(s.sent);
        const double sd = std::sqrt(gain * (1 - gain) / double(s.sent));
        CHECK(std::abs(shat - gain) < 6 * sd + 1e-12);
        REQUIRE(s.success > 100);
        const double ehat = double(s.errors) / double(s.success);
        const double esd = std::sqrt(err_rate * (1 - err_rate) / double(s.success));
        CHECK(std::abs(ehat - err_rate) < 6 * esd + 1e-3);
    }
}

TEST_CASE("single-photon yield does not depend on the basis") {
    LinkModel model(desk_source(), desk_source(), desk_link());
    CHECK(model.yield(Basis::Z, 1, 1) == Catch::Approx(model.yield(Basis::X, 1, 1)).epsilon(1e-9));
    // and the X error of the pure single-photon class is (1-V)/2
    auto s = model.class_split(Basis::X, 0, 0, 1, 1);
    const double pure_frac = s.pure11 / s.total;
    CHECK(pure_frac > 0.99);  // darks are tiny at desk settings
}

TEST_CASE("truncated photon distribution is normalized") {
    LinkModel model(desk_source(), desk_source(), desk_link());
    for (int v = 0; v < 3; ++v) {
        double total = 0;
        for (int n = 0; n < kPhotonClasses; ++n) total += model.truncated_pmf(0, Intensity(v), n);
        CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
    }
    CHECK(model.truncated_pmf(0, Intensity::vac, 0) == Catch::Approx(1.0));
    CHECK(model.truncated_pmf(0, Intensity::vac, 1) == 0.0);
}

TEST_CASE("dark-free vacuum pulses never succeed") {
    auto src = desk_source();
    auto lnk = desk_link();
    lnk.dark_rate_hz = 0.0;
    auto res = sample_session(src, lnk, 100000, 5);
    for (int beta = 0; beta < 2; ++beta) {
        CHECK(res.tally.at(Intensity::vac, Intensity::vac, Basis(beta)).success == 0);
        CHECK(res.tally.at(Intensity::vac, Intensity::sig, Basis(beta)).success == 0);
        CHECK(res.tally.at(Intensity::sig, Intensity::vac, Basis(beta)).success == 0);
    }
}

TEST_CASE("oracle tags partition the recorded counts") {
    auto res = sample_session(desk_source(), desk_link(), 150000, 11, true);
    const auto& t = res.tally;
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            for (int beta = 0; beta < 2; ++beta) {
                const Intensity ib = Intensity(b), ic = Intensity(c);
                const Basis bb = Basis(beta);
                std::uint64_t s = 0, e = 0;
                for (int na = 0; na < kPhotonClasses; ++na)
                    for (int nb = 0; nb < kPhotonClasses; ++nb) {
                        s += t.ph_success(ib, ic, bb, na, nb);
                        e += t.ph_errors(ib, ic, bb, na, nb);
                    }
                REQUIRE(s == t.at(ib, ic, bb).success);
                REQUIRE(e == t.at(ib, ic, bb).errors);
                REQUIRE(t.true_n1(ib, ic, bb) == t.ph_success(ib, ic, bb, 1, 1));
            }
    // asking a plain tally for oracle data throws
    auto plain = sample_session(desk_source(), desk_link(), 1000, 11);
    CHECK_THROWS_AS(plain.tally.true_n1(Intensity::sig, Intensity::sig, Basis::Z), SimError);
}

TEST_CASE("tally text round-trips exactly") {
    for (bool oracle : {false, true}) {
        auto res = sample_session(desk_source(), desk_link(), 60000, 13, oracle);
        std::stringstream ss;
        res.tally.serialize(ss);
        TallyMatrix back = TallyMatrix::parse(ss);
        CHECK(back == res.tally);
    }
    std::stringstream bad("not a tally\n");
    CHECK_THROWS_AS(TallyMatrix::parse(bad), SimError);
}

TEST_CASE("merge adds counts and rejects mixed modes") {
    auto r1 = sample_session(desk_source(), desk_link(), 30000, 1);
    auto r2 = sample_session(desk_source(), desk_link(), 20000, 2);
    TallyMatrix sum = r1.tally;
    sum.merge(r2.tally);
    CHECK(sum.n_pulses == 50000);
    CHECK(sum.total_sent() == 50000);
    const auto& a = r1.tally.at(Intensity::sig, Intensity::sig, Basis::Z);
    const auto& b = r2.tally.at(Intensity::sig, Intensity::sig, Basis::Z);
    CHECK(sum.at(Intensity::sig, Intensity::sig, Basis::Z).success == a.success + b.success);

    auto r3 = sample_session(desk_source(), desk_link(), 1000, 3, true);
    CHECK_THROWS_AS(sum.merge(r3.tally), SimError);
}

TEST_CASE("range-parallel sampling conserves pulses") {
    auto res = sample_session_ranges(desk_source(), desk_source(), desk_link(), 100001, 21, 7);
    CHECK(res.tally.n_pulses == 100001);
    CHECK(res.tally.total_sent() == 100001);
    auto again = sample_session_ranges(desk_source(), desk_source(), desk_link(), 100001, 21, 7);
    CHECK(res.tally == again.tally);
}

TEST_CASE("materialized events match the tally and sift cleanly") {
    auto res = sample_session(desk_source(), desk_link(), 120000, 17, false, true);
    const auto& t = res.tally;
    std::uint64_t successes = 0;
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            for (int beta = 0; beta < 2; ++beta)
                successes += t.at(Intensity(b), Intensity(c), Basis(beta)).success;
    REQUIRE(res.events.size() == successes);

    // each party's view plus the two announcements reproduce the tally's
    // per-setting counts, and the flip convention turns errors into mismatches
    PartyView va = make_view(res.events, 0);
    PartyView vb = make_view(res.events, 1);
    auto ann_a = make_announce(va);
    auto ann_b = make_announce(vb);
    auto idx = LinkSiftIndex::build(ann_a, ann_b);
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            for (int beta = 0; beta < 2; ++beta) {
                const auto& cell = idx.idx[b][c][beta];
                const auto& s = t.at(Intensity(b), Intensity(c), Basis(beta));
                REQUIRE(cell.size() == s.success);
                Bitstring bits_a = view_bits(va, cell, false);
                Bitstring bits_b = view_bits(vb, cell, true);
                REQUIRE(bits_a.mismatches(bits_b) == s.errors);
            }

    // sift_anticorrelated agrees with the view route
    auto sifted = sift_anticorrelated(res.events);
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
            for (int beta = 0; beta < 2; ++beta) {
                const auto& s = t.at(Intensity(b), Intensity(c), Basis(beta));
                const auto& ka = sifted.side_a(Intensity(b), Intensity(c), Basis(beta));
                const auto& kb = sifted.side_b(Intensity(b), Intensity(c), Basis(beta));
                REQUIRE(ka.size() == s.success);
                REQUIRE(ka.mismatches(kb) == s.errors);
            }
}

TEST_CASE("config validation refuses nonsense") {
    auto src = desk_source();
    src.p_mu = 0.9;  // probabilities no longer sum to 1
    CHECK_THROWS_AS(src.validate(), SimError);
    auto src2 = desk_source();
    src2.mu = -0.1;
    CHECK_THROWS_AS(src2.validate(), SimError);
    auto lnk = desk_link();
    lnk.visibility = 1.2;
    CHECK_THROWS_AS(lnk.validate(), SimError);
    auto lnk2 = desk_link();
    lnk2.det_eff_0 = 1.5;
    CHECK_THROWS_AS(lnk2.validate(), SimError);
}
