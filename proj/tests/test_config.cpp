#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "mdiqds/config.hpp"

using namespace mdiqds::cfg;

namespace {

ExperimentConfig from_text(const std::string& text) {
    return load_experiment(Ini::parse_string(text));
}

// Minimal file helper for the load_experiment_file paths.
struct TempFile {
    std::string path;
    explicit TempFile(const std::string& text) {
        static int counter = 0;
        path = "test_config_tmp_" + std::to_string(counter++) + ".cfg";
        std::ofstream out(path);
        out << text;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("ini grammar") {
    SECTION("sections, comments, trimming, overrides") {
        const auto ini = Ini::parse_string(
            "top = 1\n"
            "[alpha]\n"
            "  key =  spaced value \t\n"
            "num = 2 # trailing comment\n"
            "num = 3 ; later duplicate wins\n"
            "; full-line comment\n"
            "# another\n"
            "\n"
            "[ beta ]\n"
            "flag = yes\n");
        CHECK(ini.get_string("", "top", "?") == "1");
        CHECK(ini.get_string("alpha", "key", "?") == "spaced value");
        CHECK(ini.get_double("alpha", "num", 0) == 3.0);
        CHECK(ini.get_bool("beta", "flag", false));
        CHECK(ini.sections().count("beta") == 1);
    }

    SECTION("malformed lines are rejected with the line number") {
        CHECK_THROWS_AS(Ini::parse_string("[open\n"), ConfigError);
        CHECK_THROWS_AS(Ini::parse_string("[]\n"), ConfigError);
        CHECK_THROWS_AS(Ini::parse_string("no equals sign\n"), ConfigError);
        CHECK_THROWS_AS(Ini::parse_string("= value without key\n"), ConfigError);
        CHECK_THROWS_WITH(Ini::parse_string("ok = 1\nbroken\n"),
                          Catch::Matchers::ContainsSubstring("line 2"));
    }

    SECTION("typed getters fall back when the key is absent") {
        const auto ini = Ini::parse_string("[s]\nk = 1\n");
        CHECK(ini.get_string("s", "missing", "dflt") == "dflt");
        CHECK(ini.get_string("other", "k", "dflt") == "dflt");
        CHECK(ini.get_double("s", "missing", 2.5) == 2.5);
        CHECK(ini.get_u64("s", "missing", 7) == 7);
        CHECK(ini.get_bool("s", "missing", true));
        CHECK_FALSE(ini.has("s", "missing"));
        CHECK(ini.has("s", "k"));
    }

    SECTION("get_double rejects trailing garbage") {
        const auto ini = Ini::parse_string("[s]\na = 1.5x\nb = nope\n");
        CHECK_THROWS_AS(ini.get_double("s", "a", 0), ConfigError);
        CHECK_THROWS_AS(ini.get_double("s", "b", 0), ConfigError);
    }

    SECTION("get_u64 accepts scientific counts and rejects non-integers") {
        const auto ini = Ini::parse_string(
            "[s]\n"
            "big = 1e9\n"
            "plain = 12345\n"
            "frac = 2.5\n"
            "neg = -3\n");
        CHECK(ini.get_u64("s", "big", 0) == 1000000000ull);
        CHECK(ini.get_u64("s", "plain", 0) == 12345);
        CHECK_THROWS_AS(ini.get_u64("s", "frac", 0), ConfigError);
        CHECK_THROWS_AS(ini.get_u64("s", "neg", 0), ConfigError);
    }

    SECTION("get_bool spellings") {
        const auto ini = Ini::parse_string(
            "[s]\nt1 = true\nt2 = 1\nt3 = yes\nt4 = on\n"
            "f1 = false\nf2 = 0\nf3 = no\nf4 = off\nbad = maybe\n");
        for (const char* k : {"t1", "t2", "t3", "t4"}) CHECK(ini.get_bool("s", k, false));
        for (const char* k : {"f1", "f2", "f3", "f4"}) CHECK_FALSE(ini.get_bool("s", k, true));
        CHECK_THROWS_AS(ini.get_bool("s", "bad", false), ConfigError);
    }

    SECTION("parse_file refuses a missing path") {
        CHECK_THROWS_AS(Ini::parse_file("definitely_not_here.cfg"), ConfigError);
    }
}

TEST_CASE("experiment defaults") {
    const ExperimentConfig c = from_text("");

    CHECK(c.source_alice.mu == Catch::Approx(0.33));
    CHECK(c.source_bob.nu == Catch::Approx(0.1));
    CHECK(c.source_charlie.p_z_decoy == Catch::Approx(0.369));
    CHECK(c.link_ab.loss_a_db == Catch::Approx(9.2));
    CHECK(c.link_bc.det_eff_1 == Catch::Approx(0.64));

    CHECK(c.session.pulses_ab == 0);
    CHECK(c.session.seed == 1);

    CHECK(c.budget.eps_qkd == Catch::Approx(8e-8));
    CHECK(c.budget.eps_cor == Catch::Approx(1e-8));

    CHECK(c.thresholds.delta == Catch::Approx(0.0002));
    CHECK_FALSE(c.thresholds.count_a.has_value());
    CHECK_FALSE(c.thresholds.count_v.has_value());
    CHECK_FALSE(c.thresholds.e_bar_override.has_value());
    CHECK_FALSE(c.thresholds.p_e_override.has_value());

    CHECK(c.security.f == Catch::Approx(7.5e-8));
    CHECK(c.security.eps == Catch::Approx(1.95e-16));

    CHECK(c.reconcile.passes == 4);
    CHECK(c.reconcile.min_test_bits == 200);

    CHECK(c.harness.transport == "inproc");
    CHECK(c.harness.adversary == "honest");
    CHECK(c.harness.trials == 1);
    CHECK(c.harness.max_L == 0);
    CHECK(c.harness.auth_key_bits == (1u << 21));
    CHECK(c.harness.min_kgp_test == 64);

    CHECK_FALSE(c.fixture.enabled);
    CHECK(c.key_dir == "keys");
    CHECK(c.out_dir == "out");
}

TEST_CASE("experiment section layering") {
    SECTION("source baseline feeds all parties, per-party sections override") {
        const ExperimentConfig c = from_text(
            "[source]\n"
            "mu = 0.5\n"
            "nu = 0.12\n"
            "[source.bob]\n"
            "mu = 0.6\n");
        CHECK(c.source_alice.mu == Catch::Approx(0.5));
        CHECK(c.source_bob.mu == Catch::Approx(0.6));
        CHECK(c.source_charlie.mu == Catch::Approx(0.5));
        // untouched key keeps the shared baseline everywhere
        CHECK(c.source_bob.nu == Catch::Approx(0.12));
        CHECK(c.source_charlie.nu == Catch::Approx(0.12));
    }

    SECTION("link baseline feeds all links, per-link sections override") {
        const ExperimentConfig c = from_text(
            "[link]\n"
            "loss_a_db = 1.0\n"
            "loss_b_db = 2.0\n"
            "[link.bc]\n"
            "loss_a_db = 8.1\n");
        CHECK(c.link_ab.loss_a_db == Catch::Approx(1.0));
        CHECK(c.link_ac.loss_a_db == Catch::Approx(1.0));
        CHECK(c.link_bc.loss_a_db == Catch::Approx(8.1));
        CHECK(c.link_bc.loss_b_db == Catch::Approx(2.0));
    }

    SECTION("shared pulse count with a per-link override") {
        const ExperimentConfig c = from_text(
            "[session]\n"
            "pulses = 5e6\n"
            "pulses_bc = 2e6\n"
            "seed = 42\n");
        CHECK(c.session.pulses_ab == 5000000);
        CHECK(c.session.pulses_ac == 5000000);
        CHECK(c.session.pulses_bc == 2000000);
        CHECK(c.session.seed == 42);
    }
}

TEST_CASE("experiment epsilon and qds keys") {
    SECTION("eps_qkd re-splits the budget uniformly") {
        const ExperimentConfig c = from_text("[epsilon]\neps_qkd = 1.6e-7\n");
        CHECK(c.budget.eps_qkd == Catch::Approx(1.6e-7));
        CHECK(c.budget.eps_cor == Catch::Approx(2e-8));
        CHECK(c.budget.eps_1 == Catch::Approx(1.6e-7 / 96));
    }

    SECTION("explicit eps_cor tightens the correctness share") {
        const ExperimentConfig c = from_text("[epsilon]\neps_cor = 5e-9\n");
        CHECK(c.budget.eps_cor == Catch::Approx(5e-9));
        CHECK(c.budget.eps_qkd == Catch::Approx(8e-8));
    }

    SECTION("an eps_cor that overruns the total is refused at load") {
        CHECK_THROWS(from_text("[epsilon]\neps_cor = 5e-8\n"));
    }

    SECTION("qds threshold and security keys") {
        const ExperimentConfig c = from_text(
            "[qds]\n"
            "delta = 0.0005\n"
            "count_a = 1073\n"
            "count_v = 4748\n"
            "e_bar = 0.0025\n"
            "p_e = 0.0123\n"
            "f = 1e-4\n"
            "eps = 1e-15\n"
            "eps_pe = 2e-8\n"
            "eps_est = 3e-8\n");
        CHECK(c.thresholds.delta == Catch::Approx(0.0005));
        REQUIRE(c.thresholds.count_a.has_value());
        REQUIRE(c.thresholds.count_v.has_value());
        CHECK(*c.thresholds.count_a == 1073);
        CHECK(*c.thresholds.count_v == 4748);
        REQUIRE(c.thresholds.e_bar_override.has_value());
        REQUIRE(c.thresholds.p_e_override.has_value());
        CHECK(*c.thresholds.e_bar_override == Catch::Approx(0.0025));
        CHECK(*c.thresholds.p_e_override == Catch::Approx(0.0123));
        CHECK(c.security.f == Catch::Approx(1e-4));
        CHECK(c.security.eps == Catch::Approx(1e-15));
        CHECK(c.security.eps_pe == Catch::Approx(2e-8));
        CHECK(c.security.eps_est == Catch::Approx(3e-8));
    }
}

TEST_CASE("experiment harness, reconcile, fixture, paths") {
    const ExperimentConfig c = from_text(
        "[reconcile]\n"
        "passes = 6\n"
        "test_fraction = 0.02\n"
        "min_test_bits = 128\n"
        "max_test_bits = 4096\n"
        "[harness]\n"
        "transport = socket\n"
        "host = 10.0.0.1\n"
        "base_port = 47000\n"
        "timeout_s = 60\n"
        "message = 0\n"
        "adversary = forging-recipient\n"
        "trials = 250\n"
        "max_L = 2000\n"
        "auth_key_bits = 1048576\n"
        "min_kgp_test = 32\n"
        "[fixture]\n"
        "enabled = true\n"
        "ell = 4724819\n"
        "kgp_raw = 2200000\n"
        "kgp_error_rate = 0.00145\n"
        "forge_error_rate = 0.12\n"
        "[keys]\n"
        "dir = pairkeys\n"
        "[output]\n"
        "dir = results\n");
    CHECK(c.reconcile.passes == 6);
    CHECK(c.reconcile.test_fraction == Catch::Approx(0.02));
    CHECK(c.reconcile.min_test_bits == 128);
    CHECK(c.reconcile.max_test_bits == 4096);
    CHECK(c.harness.transport == "socket");
    CHECK(c.harness.host == "10.0.0.1");
    CHECK(c.harness.base_port == 47000);
    CHECK(c.harness.timeout_s == 60);
    CHECK(c.harness.message == 0);
    CHECK(c.harness.adversary == "forging-recipient");
    CHECK(c.harness.trials == 250);
    CHECK(c.harness.max_L == 2000);
    CHECK(c.harness.auth_key_bits == 1048576);
    CHECK(c.harness.min_kgp_test == 32);
    CHECK(c.fixture.enabled);
    CHECK(c.fixture.ell == 4724819);
    CHECK(c.fixture.kgp_raw == 2200000);
    CHECK(c.fixture.kgp_error_rate == Catch::Approx(0.00145));
    CHECK(c.fixture.forge_error_rate == Catch::Approx(0.12));
    CHECK(c.key_dir == "pairkeys");
    CHECK(c.out_dir == "results");
}

TEST_CASE("key dir environment override") {
    unsetenv("MDIQDS_KEY_DIR");
    const std::string text = "[keys]\ndir = from_file\n";

    const ExperimentConfig plain = from_text(text);
    CHECK(plain.key_dir == "from_file");

    setenv("MDIQDS_KEY_DIR", "from_env", 1);
    const ExperimentConfig overridden = from_text(text);
    CHECK(overridden.key_dir == "from_env");

    // an empty value does not override
    setenv("MDIQDS_KEY_DIR", "", 1);
    const ExperimentConfig empty_env = from_text(text);
    CHECK(empty_env.key_dir == "from_file");

    unsetenv("MDIQDS_KEY_DIR");
}

TEST_CASE("experiment file validation") {
    SECTION("a complete file loads and validates") {
        TempFile f(
            "[session]\n"
            "pulses = 1e6\n"
            "seed = 7\n");
        const ExperimentConfig c = load_experiment_file(f.path);
        CHECK(c.session.pulses_ab == 1000000);
        CHECK(c.session.seed == 7);
    }

    SECTION("zero pulse budgets are refused outside fixture mode") {
        TempFile f("[session]\nseed = 1\n");
        CHECK_THROWS_AS(load_experiment_file(f.path), ConfigError);
    }

    SECTION("fixture mode waives pulse budgets but needs usable sizes") {
        TempFile ok(
            "[fixture]\n"
            "enabled = true\n"
            "ell = 6000\n"
            "kgp_raw = 4000\n");
        CHECK_NOTHROW(load_experiment_file(ok.path));

        TempFile tiny(
            "[fixture]\n"
            "enabled = true\n"
            "ell = 11\n"
            "kgp_raw = 4000\n");
        CHECK_THROWS_AS(load_experiment_file(tiny.path), ConfigError);

        TempFile noraw(
            "[fixture]\n"
            "enabled = true\n"
            "ell = 6000\n");
        CHECK_THROWS_AS(load_experiment_file(noraw.path), ConfigError);
    }

    SECTION("bad physics settings surface through validate") {
        TempFile f(
            "[session]\n"
            "pulses = 1e6\n"
            "[source]\n"
            "p_mu = 0.9\n"
            "p_nu = 0.9\n"
            "p_w = 0.9\n");
        CHECK_THROWS(load_experiment_file(f.path));
    }

    SECTION("missing file") {
        CHECK_THROWS_AS(load_experiment_file("no_such_dir/no_such.cfg"), ConfigError);
    }
}
